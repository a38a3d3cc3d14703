import csv
import os
import subprocess
import sys

import pytest
from hypothesis import given, strategies as st

from bregbox import cli, config, verify
from bregbox.diagnostics import METRIC_COLUMNS
from bregbox.errors import ConfigError, SubproblemNotConverged

BASE = """\
# small bang-bang run
benchmark.name = bang_bang
benchmark.n = 101
benchmark.op_kind = poisson1d
benchmark.scale = 0.25
schedule.kind = constant
schedule.c_alpha = 1.0
epsilon = 0
"""


def write_cfg(tmp_path, extra="", base=BASE, name="run.cfg"):
    path = tmp_path / name
    path.write_text(base + extra)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- formatting and config --------------------------------------------------

def test_format_value():
    assert cli.format_value(None) == ""
    assert cli.format_value(12) == "12"
    assert cli.format_value(0.1) == "0.10000000000000001"


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_format_value_round_trips(x):
    assert float(cli.format_value(x)) == x


def test_parse_text_comments_and_errors():
    raw = config.parse_text("a = 1  # note\n\n# only comment\nb=x y\n")
    assert raw == {"a": "1", "b": "x y"}
    with pytest.raises(ConfigError):
        config.parse_text("a = 1\na = 2\n")
    with pytest.raises(ConfigError):
        config.parse_text("just words\n")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError) as exc:
        config.from_mapping({"k_max": "5", "shedule.kind": "constant"})
    assert exc.value.key == "shedule.kind"


@pytest.mark.parametrize("raw, key", [
    ({"schedule.kind": "explicit", "schedule.values": "1, 0, 2"}, "schedule.values"),
    ({"schedule.values": "1, 2"}, "schedule.values"),
    ({"schedule.c_alpha": "nan"}, "schedule.c_alpha"),
    ({"k_max": "-3"}, "k_max"),
    ({"k_max": "ten"}, "k_max"),
    ({"mode": "fast"}, "mode"),
    ({"theta": "-1"}, "theta"),
    ({"solver": "cg"}, "solver"),
    ({"sweep.s": "0, 1", "sweep.c_alpha": "1, 2, 3"}, "sweep.c_alpha"),
    ({"sweep.s": "-1"}, "sweep.s"),
    ({"benchmark.n": "2"}, "benchmark.n"),
])
def test_invalid_values_name_their_key(raw, key):
    with pytest.raises(ConfigError) as exc:
        config.from_mapping(raw)
    assert exc.value.key == key


def test_defaults_and_auto_values():
    cfg = config.from_mapping({"epsilon": "auto", "theta": "auto"})
    assert cfg.epsilon is None and cfg.theta is None
    assert cfg.stop_rule().k_max == 10_000
    assert cfg.schedules() == [cfg.schedule]


def test_sweep_schedules_broadcast():
    cfg = config.from_mapping({"sweep.s": "0, 0.5, 1", "sweep.c_alpha": "2"})
    scheds = cfg.schedules()
    assert [s.s for s in scheds] == [0.0, 0.5, 1.0]
    assert all(s.kind == "polynomial" and s.c_alpha == 2.0 for s in scheds)


@pytest.mark.parametrize("text", [
    BASE,
    "benchmark.name = mixed\nbenchmark.plateau = 0.3, 0.5\nschedule.kind = explicit\n"
    "schedule.values = 1.5, 0.5\ntheta = 0.25\nfit.k_max = 40\nmode = both\n",
    "sweep.s = 0, 1\nsweep.c_alpha = 1, 1000\nbenchmark.M = 250.0\n",
])
def test_dump_round_trip(text):
    cfg = config.from_mapping(config.parse_text(text))
    again = config.from_mapping(config.parse_text(config.dump(cfg)))
    assert again == cfg


# -- run --------------------------------------------------------------------

def test_run_writes_history(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 10\n")), "--out", str(out)])
    assert code == 0
    rows = read_csv(out / "history.csv")
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert (out / "history.csv").read_text().splitlines()[0] == ",".join(METRIC_COLUMNS)
    assert len(rows) == 11
    assert [int(r[0]) for r in rows[1:]] == list(range(1, 11))
    summary = (out / "summary.txt").read_text()
    assert "final_k = 10" in summary and "stop_reason = k_max" in summary
    assert "slope.H_gap = " in summary
    assert not [f for f in os.listdir(out) if f.endswith(".tmp")]


def test_rerun_overwrites(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 30\n")), "--out", str(out)])
    cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 12\n", name="b.cfg")), "--out", str(out)])
    assert len(read_csv(out / "history.csv")) == 13


def test_run_is_deterministic_apart_from_timing(tmp_path):
    cfg = write_cfg(tmp_path, "k_max = 15\n")
    for d in ("a", "b"):
        cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / d)])
    ra, rb = (read_csv(tmp_path / d / "history.csv") for d in ("a", "b"))
    wall = METRIC_COLUMNS.index("wall_ms")
    strip = lambda rows: [r[:wall] + r[wall + 1:] for r in rows]  # noqa: E731
    assert strip(ra) == strip(rb)


def test_mode_both(tmp_path):
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 12\nmode = both\n")),
                     "--out", str(out)])
    assert code == 0
    assert not (out / "history.csv").exists()
    breg = read_csv(out / "history.bregman.csv")
    ppm = read_csv(out / "history.ppm.csv")
    assert len(breg) == len(ppm) == 13
    col = METRIC_COLUMNS.index("lambda_avg_err_sq")
    assert all(r[col] == "" for r in ppm[1:])
    assert all(r[col] != "" for r in breg[1:])
    summary = (out / "summary.txt").read_text()
    assert "[bregman]" in summary and "[ppm]" in summary


def test_unfittable_slopes_reported(tmp_path):
    out = tmp_path / "out"
    cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 5\n")), "--out", str(out)])
    assert "slope.u_err_L2_sq = n/a" in (out / "summary.txt").read_text()


def test_seed_flag_overrides(tmp_path, monkeypatch):
    seen = []
    real = cli.build

    def spy(spec):
        seen.append(spec.seed)
        return real(spec)

    monkeypatch.setattr(cli, "build", spy)
    cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 1\n")), "--out",
              str(tmp_path / "o"), "--seed", "9"])
    assert seen == [9]


def test_zero_alpha_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "k_max = 3\n", base=BASE.replace(
        "schedule.kind = constant\nschedule.c_alpha = 1.0\n",
        "schedule.kind = explicit\nschedule.values = 1, 0, 1\n"))
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "schedule.values" in capsys.readouterr().err


def test_config_errors_exit_2(tmp_path, capsys):
    assert cli.main(["run", "--config", str(write_cfg(tmp_path, "colour = red\n"))]) == 2
    assert "colour" in capsys.readouterr().err
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    bad = "benchmark.name = source_condition\nbenchmark.M = 1e-6\n"
    assert cli.main(["run", "--config", str(write_cfg(tmp_path, base=bad)),
                     "--out", str(tmp_path / "o")]) == 2
    assert "benchmark" in capsys.readouterr().err


def test_solver_failure_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise SubproblemNotConverged("outer iteration 4: PDAS did not settle", iteration=4)

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["run", "--config", str(write_cfg(tmp_path, "k_max = 5\n")),
                     "--out", str(tmp_path / "o")]) == 3
    assert "outer iteration 4" in capsys.readouterr().err


# -- sweep ------------------------------------------------------------------

SWEEP = BASE.replace("benchmark.n = 101\n", "benchmark.n = 201\n") + \
    "k_max = 150\nsweep.s = 0, 0.5, 1\nsweep.c_alpha = 1\n"


def test_sweep(tmp_path):
    cfg = write_cfg(tmp_path, base=SWEEP)
    out = tmp_path / "s1"
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_csv(out / "sweep.csv")
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS
    assert len(rows) == 4
    for i in range(3):
        assert len(read_csv(out / f"variant{i}" / "history.csv")) == 151
    slope = [float(r[rows[0].index("slope_u_err_L2_sq")]) for r in rows[1:]]
    # faster decay of the error for faster decaying alpha_k
    assert slope[0] > slope[1] > slope[2]
    out2 = tmp_path / "s2"
    cli.main(["sweep", "--config", str(cfg), "--out", str(out2)])
    assert (out / "sweep.csv").read_text() == (out2 / "sweep.csv").read_text()


def test_sweep_thread_cap(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, base=BASE + "k_max = 3\nsweep.s = 0, 1\n")
    monkeypatch.setenv("BREGBOX_THREADS", "1")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("BREGBOX_THREADS", "0")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 2
    monkeypatch.setenv("BREGBOX_THREADS", "many")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 2


def test_sweep_rejects_mode_both(tmp_path):
    cfg = write_cfg(tmp_path, base=BASE + "k_max = 3\nmode = both\n")
    assert cli.main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 2


# -- verify -----------------------------------------------------------------

def test_verify_adjoint(capsys):
    assert cli.main(["verify", "adjoint"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(line.startswith("PASS") for line in lines)
    assert cli.main(["verify", "--suite", "adjoint", "--seed", "3"]) == 0


def test_verify_failure_exits_1(monkeypatch, capsys):
    monkeypatch.setitem(verify.SUITES, "adjoint",
                        lambda seed: [verify.Check("broken adjoint", False, "defect 1")])
    assert cli.main(["verify", "adjoint"]) == 1
    captured = capsys.readouterr()
    assert "FAIL  broken adjoint" in captured.out
    assert "broken adjoint" in captured.err


def test_verify_needs_suite():
    assert cli.main(["verify"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["verify", "everything"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bregbox", "verify", "adjoint"],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert res.stdout.count("PASS") == 4
