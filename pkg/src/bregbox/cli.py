"""Command-line experiment runner: ``run``, ``sweep`` and ``verify``.

Exit codes: 0 success, 1 verification failure, 2 configuration error,
3 subproblem non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .bregman import run, run_ppm
from .diagnostics import METRIC_COLUMNS, fit_rate
from .errors import ConfigError, ConstructionError, DataError, SubproblemNotConverged
from .problems import build

__all__ = ["main", "format_value", "write_history", "atomic_write"]

FIT_METRICS = ("H_gap", "u_err_L2_sq", "lambda_avg_err_sq")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


def format_value(v) -> str:
    """CSV field: ``''`` for absent values, 17 significant digits for floats."""
    if v is None:
        return ""
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    return "%.17g" % v


def atomic_write(path: Path, text: str):
    """Write ``text`` to a temporary file next to ``path``, then rename it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def history_text(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in history:
        w.writerow([format_value(v) for v in row.as_tuple()])
    return buf.getvalue()


def write_history(path, history):
    atomic_write(path, history_text(history))


def _slopes(history, k_min, k_max):
    out = {}
    for m in FIT_METRICS:
        try:
            out[m] = fit_rate(history, m, (k_min, k_max))[0]
        except DataError:
            out[m] = None
    return out


def _summary_lines(label, state, slopes):
    lines = [f"[{label}]", f"final_k = {state.k}", f"stop_reason = {state.stop_reason}"]
    for m, v in slopes.items():
        lines.append(f"slope.{m} = {'n/a' if v is None else format_value(v)}")
    return lines


def _execute(cfg, sched=None):
    """Run one configuration; returns ``{mode: (state, history)}``."""
    sched = sched or cfg.schedule
    p = build(cfg.benchmark)
    scfg, stop = cfg.solver_config(), cfg.stop_rule()
    results = {}
    if cfg.mode in ("bregman", "both"):
        results["bregman"] = run(p, sched, stop, scfg)
    if cfg.mode in ("ppm", "both"):
        results["ppm"] = run_ppm(p, sched, stop, scfg)
    return results


def _load(args):
    cfg = config_mod.load(args.config)
    if args.seed is not None:
        cfg = replace(cfg, benchmark=replace(cfg.benchmark, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output=args.out)
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    results = _execute(cfg)
    out = Path(cfg.output)
    summary = []
    for mode, (state, hist) in results.items():
        name = "history.csv" if cfg.mode != "both" else f"history.{mode}.csv"
        write_history(out / name, hist)
        summary += _summary_lines(mode, state, _slopes(hist, cfg.fit_k_min, cfg.fit_k_max))
    atomic_write(out / "summary.txt", "\n".join(summary) + "\n")
    return EXIT_OK


def _threads(default):
    raw = os.environ.get("BREGBOX_THREADS")
    if raw is None:
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("BREGBOX_THREADS", f"expected a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("BREGBOX_THREADS", "must be >= 1")
    return n


SWEEP_COLUMNS = ("variant", "kind", "c_alpha", "s", "final_k", "stop_reason") + tuple(
    f"slope_{m}" for m in FIT_METRICS)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if cfg.mode == "both":
        raise ConfigError("mode", "sweep runs a single mode")
    scheds = cfg.schedules()
    workers = _threads(min(len(scheds), os.cpu_count() or 1))
    out = Path(cfg.output)

    def one(i_sched):
        i, sched = i_sched
        (state, hist), = _execute(cfg, sched).values()
        write_history(out / f"variant{i}" / "history.csv", hist)
        return i, sched, state, _slopes(hist, cfg.fit_k_min, cfg.fit_k_max)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(one, enumerate(scheds)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for i, sched, state, slopes in rows:
        w.writerow([i, sched.kind, format_value(float(sched.c_alpha)), format_value(float(sched.s)),
                    state.k, state.stop_reason] + [format_value(slopes[m]) for m in FIT_METRICS])
    atomic_write(out / "sweep.csv", buf.getvalue())
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suite

    seed = 0 if args.seed is None else args.seed
    checks = run_suite(args.suite, seed)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="bregbox", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to a key = value config file")
        sp.add_argument("--out", help="output directory (overrides 'output')")
        sp.add_argument("--seed", type=int, help="overrides benchmark.seed")
    sp = sub.add_parser("verify")
    sp.add_argument("suite", nargs="?", choices=("adjoint", "oracle", "rates", "invariants"))
    sp.add_argument("--suite", dest="suite_opt", choices=("adjoint", "oracle", "rates", "invariants"))
    sp.add_argument("--seed", type=int)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify":
            args.suite = args.suite_opt or args.suite
            if args.suite is None:
                raise ConfigError("--suite", "name a suite: adjoint, oracle, rates or invariants")
            return cmd_verify(args)
        return cmd_run(args) if args.command == "run" else cmd_sweep(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConstructionError as exc:
        print(f"config error: benchmark: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SubproblemNotConverged as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
