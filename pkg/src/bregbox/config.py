"""Flat ``key = value`` experiment configuration (see docs/config.md)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .bregman import Schedule, SolverConfig, StopRule
from .errors import ConfigError
from .problems import BenchmarkSpec

__all__ = ["RunConfig", "parse_text", "load", "from_mapping", "dump"]

_BENCH_KEYS = {
    "benchmark.name": str, "benchmark.n": int, "benchmark.op_kind": str,
    "benchmark.lower": float, "benchmark.upper": float, "benchmark.pattern": str,
    "benchmark.scale": float, "benchmark.M": "optfloat", "benchmark.plateau": "floats",
    "benchmark.kernel_width": float, "benchmark.seed": int,
}
_KEYS = {
    **_BENCH_KEYS,
    "schedule.kind": str, "schedule.c_alpha": float, "schedule.s": float,
    "schedule.values": "floats",
    "solver": str, "form": str, "tol": float, "k_max": int, "epsilon": "optfloat",
    "theta": "theta", "output": str, "mode": str,
    "fit.k_min": int, "fit.k_max": "optint",
    "sweep.s": "floats", "sweep.c_alpha": "floats",
}


@dataclass
class RunConfig:
    benchmark: BenchmarkSpec = field(default_factory=BenchmarkSpec)
    schedule: Schedule = field(default_factory=Schedule)
    solver: str = "pdas"
    form: str = "A3"
    tol: float = 1e-10
    k_max: int = 10_000
    epsilon: float | None = None
    theta: float | None = None
    output: str = "out"
    mode: str = "bregman"
    fit_k_min: int = 10
    fit_k_max: int | None = None
    sweep_s: tuple = ()
    sweep_c_alpha: tuple = ()

    def solver_config(self) -> SolverConfig:
        return SolverConfig(method=self.solver, tol=self.tol, form=self.form)

    def stop_rule(self) -> StopRule:
        return StopRule(epsilon=self.epsilon, k_max=self.k_max, theta=self.theta)

    def schedules(self):
        """Schedule variants of a sweep; the single schedule when none are listed."""
        if not self.sweep_s:
            return [self.schedule]
        cs = self.sweep_c_alpha or (self.schedule.c_alpha,)
        if len(cs) == 1:
            cs = cs * len(self.sweep_s)
        if len(cs) != len(self.sweep_s):
            raise ConfigError("sweep.c_alpha", "needs one value or one per entry of sweep.s")
        return [Schedule("polynomial", c_alpha=c, s=s) for s, c in zip(self.sweep_s, cs)]


def parse_text(text: str, source="<config>") -> dict:
    """Split lines into a ``{key: raw string}`` dict; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"{source}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}", f"{source}: empty key")
        if key in out:
            raise ConfigError(key, "given more than once")
        out[key] = value
    return out


def _convert(key, kind, raw):
    try:
        if kind is str:
            if not raw:
                raise ValueError("empty value")
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind == "optfloat":
            return None if raw.lower() in ("", "auto", "none") else float(raw)
        if kind == "optint":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind == "floats":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if kind == "theta":
            if raw.lower() == "auto":
                return None
            v = float(raw)
            if not v > 0:
                raise ValueError("must be positive or 'auto'")
            return v
    except ValueError as exc:
        raise ConfigError(key, f"invalid value {raw!r} ({exc})") from None
    raise AssertionError(kind)


def from_mapping(raw: dict) -> RunConfig:
    """Validate a ``{key: string}`` mapping; unknown keys are rejected."""
    unknown = sorted(set(raw) - set(_KEYS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    vals = {k: _convert(k, _KEYS[k], v) for k, v in raw.items()}
    bench = {k.split(".", 1)[1]: v for k, v in vals.items() if k.startswith("benchmark.")}
    bench = BenchmarkSpec.from_dict(bench)
    kind = vals.get("schedule.kind", "constant")
    sched = Schedule(kind=kind, c_alpha=vals.get("schedule.c_alpha", 1.0),
                     s=vals.get("schedule.s", 0.0), values=vals.get("schedule.values", ()))
    if kind != "explicit" and "schedule.values" in vals:
        raise ConfigError("schedule.values", "only used with schedule.kind = explicit")
    cfg = RunConfig(
        benchmark=bench, schedule=sched,
        solver=vals.get("solver", "pdas"), form=vals.get("form", "A3"),
        tol=vals.get("tol", 1e-10), k_max=vals.get("k_max", 10_000),
        epsilon=vals.get("epsilon"), theta=vals.get("theta"),
        output=vals.get("output", "out"), mode=vals.get("mode", "bregman"),
        fit_k_min=vals.get("fit.k_min", 10), fit_k_max=vals.get("fit.k_max"),
        sweep_s=vals.get("sweep.s", ()), sweep_c_alpha=vals.get("sweep.c_alpha", ()),
    )
    if cfg.mode not in ("bregman", "ppm", "both"):
        raise ConfigError("mode", f"expected bregman, ppm or both, got {cfg.mode!r}")
    if cfg.k_max < 0:
        raise ConfigError("k_max", "must be >= 0")
    for s in cfg.sweep_s:
        if not s >= 0:
            raise ConfigError("sweep.s", f"entries must be >= 0, got {s!r}")
    for c in cfg.sweep_c_alpha:
        if not c > 0:
            raise ConfigError("sweep.c_alpha", f"entries must be positive, got {c!r}")
    cfg.solver_config()
    cfg.stop_rule()
    cfg.schedules()
    return cfg


def load(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    return from_mapping(parse_text(text, str(path)))


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


def dump(cfg: RunConfig) -> str:
    """Serialize ``cfg`` so that ``from_mapping(parse_text(dump(cfg)))`` rebuilds it."""
    lines = []
    for k, v in cfg.benchmark.to_dict().items():
        if v is not None:
            lines.append(f"benchmark.{k} = {_fmt(v)}")
    s = cfg.schedule
    lines.append(f"schedule.kind = {s.kind}")
    if s.kind == "explicit":
        lines.append(f"schedule.values = {_fmt(s.values)}")
    else:
        lines.append(f"schedule.c_alpha = {_fmt(float(s.c_alpha))}")
        lines.append(f"schedule.s = {_fmt(float(s.s))}")
    lines += [f"solver = {cfg.solver}", f"form = {cfg.form}", f"tol = {_fmt(cfg.tol)}",
              f"k_max = {cfg.k_max}",
              f"epsilon = {'auto' if cfg.epsilon is None else _fmt(cfg.epsilon)}",
              f"theta = {'auto' if cfg.theta is None else _fmt(cfg.theta)}",
              f"output = {cfg.output}", f"mode = {cfg.mode}",
              f"fit.k_min = {cfg.fit_k_min}",
              f"fit.k_max = {'none' if cfg.fit_k_max is None else cfg.fit_k_max}"]
    if cfg.sweep_s:
        lines.append(f"sweep.s = {_fmt(cfg.sweep_s)}")
    if cfg.sweep_c_alpha:
        lines.append(f"sweep.c_alpha = {_fmt(cfg.sweep_c_alpha)}")
    return "\n".join(lines) + "\n"
