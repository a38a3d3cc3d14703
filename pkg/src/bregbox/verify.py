"""Verification suites: operator adjoints, subproblem oracle, rates and invariants.

Each check returns a :class:`Check` with a pass flag and a one-line detail.
The rate experiments use the standard benchmarks of :mod:`bregbox.problems`;
their scaling is chosen so the iterates stay resolved by the grid over the
fitted window (see ``RATE_SETTINGS``).
"""
from __future__ import annotations

import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bregman import Schedule, SolverConfig, StopRule, init_state, run, step
from .constraints import BoxConstraints
from .diagnostics import fit_rate, verify_asc_measure, verify_strengthened_vi
from .errors import DataError
from .operator import (Grid, GridFunction, adjoint_consistency_check, dense_operator,
                       make_operator)
from .problems import STANDARD, standard
from .subproblem import (QuadSubproblem, brute_force_oracle, pg_tolerance, solve_pdas,
                         solve_projected_gradient)

__all__ = ["Check", "SUITES", "run_suite", "RATE_SETTINGS"]


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# Schedules and fit windows of the rate experiments.  For s = 1 the constant
# c_alpha = 1000 makes gamma_2000 (about 2000) match the s = 0 run, so both
# fits see the same resolved range of gamma.
RATE_SETTINGS = {
    "h_gap": dict(c_alpha=1.0, s=0.0, k_max=1000, window=(10, 1000)),
    "sc": dict(c_alpha=1.0, s=0.0, k_max=1000, window=(10, 1000)),
    "asc_s0": dict(c_alpha=1.0, s=0.0, k_max=2000, window=(100, 2000)),
    "asc_s1": dict(c_alpha=1000.0, s=1.0, k_max=2000, window=(100, 2000)),
}

_cache: dict = {}


def _instance(name):
    if name not in _cache:
        _cache[name] = standard(name)
    return _cache[name]


def _history(name, key):
    """Cached run of a standard benchmark with ``RATE_SETTINGS[key]``."""
    ck = (name, key)
    if ck not in _cache:
        st = RATE_SETTINGS[key]
        p = _instance(name)
        _, hist = run(p, Schedule.polynomial(st["c_alpha"], st["s"]),
                      StopRule(epsilon=0.0, k_max=st["k_max"]))
        _cache[ck] = hist
    return _cache[ck]


def _slope(hist, metric, window):
    try:
        return fit_rate(hist, metric, window)[0]
    except DataError as exc:
        return f"unfittable ({exc})"


def _le(value, bound):
    return isinstance(value, float) and value <= bound


# -- adjoint -----------------------------------------------------------------

def check_adjoint(seed=0):
    out = []
    grid = Grid.uniform(101)
    for kind in ("dense", "fredholm", "poisson1d"):
        op = make_operator(kind, grid, seed=seed)
        err = adjoint_consistency_check(op, trials=100, seed=seed)
        out.append(Check(f"adjoint {kind}", err <= 1e-10, f"max relative defect {err:.2e} (<= 1e-10)"))
    rng = np.random.default_rng(seed)
    wd = Grid.from_nodes(np.sort(rng.uniform(0, 1, 40)) + np.arange(40) * 1e-3)
    wr = Grid.from_nodes(np.sort(rng.uniform(0, 1, 25)) + np.arange(25) * 1e-3)
    op = dense_operator(rng.standard_normal((25, 40)), wd, wr)
    err = adjoint_consistency_check(op, trials=100, seed=seed)
    out.append(Check("adjoint dense nonuniform weights", err <= 1e-10, f"max relative defect {err:.2e}"))
    return out


# -- criterion 1 -------------------------------------------------------------

def random_subproblem(rng, n):
    """Random dense subproblem with random weights, bounds and ``alpha``."""
    wu = Grid(np.arange(n, dtype=float), rng.uniform(0.5, 2.0, n))
    m = int(rng.integers(max(1, n - 2), n + 3))
    wy = Grid(np.arange(m, dtype=float), rng.uniform(0.5, 2.0, m))
    op = dense_operator(rng.standard_normal((m, n)), wu, wy)
    lo = rng.uniform(-2.0, 0.0, n)
    hi = lo + rng.uniform(0.1, 2.0, n)
    box = BoxConstraints(GridFunction(wu, lo), GridFunction(wu, hi))
    b = GridFunction(wy, 3.0 * rng.standard_normal(m))
    alpha = 10.0 ** rng.uniform(-2, 2)
    return QuadSubproblem(op, b, alpha, box)


def check_oracle(seed=0, count=100):
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    worst_pg = worst_pdas = 0.0
    for _ in range(count):
        sub = random_subproblem(rng, int(rng.integers(3, 7)))
        ref = brute_force_oracle(sub)
        for solver in ("pg", "pdas"):
            if solver == "pg":
                # the fixed-point residual is scaled to certify 1e-9 accuracy
                sol = solve_projected_gradient(sub, pg_tolerance(sub, 1e-9))
            else:
                sol = solve_pdas(sub)
            err = (sol.u - ref).norm()
            if solver == "pg":
                worst_pg = max(worst_pg, err)
            else:
                worst_pdas = max(worst_pdas, err)
    dt = time.perf_counter() - t0
    ok = worst_pg <= 1e-8 and worst_pdas <= 1e-8 and dt < 10.0
    return [Check("C1 oracle equivalence", ok,
                  f"{count} instances, max err pg {worst_pg:.2e}, pdas {worst_pdas:.2e} "
                  f"(<= 1e-8), {dt:.1f}s (< 10s)")]


# -- invariants (criteria 2, 3, 9, 10, 11) -----------------------------------

FOUR = ("attainable", "source_condition", "bang_bang", "mixed")


def check_a2_a3(iters=50):
    worst = 0.0
    sched = Schedule.constant(1.0)
    for name in FOUR:
        p = _instance(name)
        s3, s2 = init_state(p), init_state(p)
        for _ in range(iters):
            s3 = step(s3, p, sched)
            s2 = step(s2, p, sched, SolverConfig(form="A2"))
            worst = max(worst, (s3.u - s2.u).norm())
    return [Check("C2 A2/A3 equivalence", worst <= 1e-8,
                  f"max ||u_A2 - u_A3|| = {worst:.2e} over {iters} steps on {len(FOUR)} builders (<= 1e-8)")]


def check_monotonicity(k_max=500):
    worst_h = worst_d = -math.inf
    for name in STANDARD:
        p = _instance(name)
        for s in (0.0, 0.5, 1.0):
            st, _ = run(p, Schedule.polynomial(1.0, s), StopRule(epsilon=0.0, k_max=k_max))
            H = np.array([r.H_uk for r in st.history])
            D = np.array([r.breg_dist_ref for r in st.history])
            worst_h = max(worst_h, float(np.max(np.diff(H))))
            worst_d = max(worst_d, float(np.max(np.diff(D))))
    ok = worst_h <= 1e-10 and worst_d <= 1e-9
    return [Check("C3 monotonicity", ok,
                  f"max H increase {worst_h:.2e} (<= 1e-10), max D increase {worst_d:.2e} (<= 1e-9)")]


def check_fixed_point(iters=20):
    worst = 0.0
    cfg_a2 = SolverConfig(form="A2")
    sched = Schedule.constant(1.0)
    stop = StopRule(epsilon=0.0, k_max=iters)
    for name in STANDARD:
        p = _instance(name)
        ref = p.reference
        starts = [(init_state(p, u0=ref.u_dagger, lam0=ref.u_dagger), cfg_a2),
                  (init_state(p, mode="ppm", u0=ref.u_dagger), SolverConfig())]
        if ref.seed_mu is not None:
            starts.append((init_state(p, mu0=ref.seed_mu), SolverConfig()))
        for s0, cfg in starts:
            st, hist = run(p, sched, stop, cfg, state=s0)
            worst = max(worst, max(math.sqrt(r.u_err_L2_sq) for r in st.history))
    return [Check("C9 fixed point", worst <= 1e-7,
                  f"max ||u_k - u_dagger|| = {worst:.2e} over {iters} steps from u_dagger (<= 1e-7)")]


def check_nonunique(k=1000):
    p = _instance("nonunique")
    st, _ = run(p, Schedule.constant(1.0), StopRule(epsilon=0.0, k_max=k))
    d = GridFunction(p.op.range_grid, p.op.matvec(st.u.values)) - p.reference.y_dagger
    ok = d.norm() <= 1e-3
    return [Check("C10 state convergence (non-unique)", ok,
                  f"||S u_k - y_dagger|| = {d.norm():.2e} at k={st.k} (<= 1e-3); "
                  f"||u_k - u_dagger|| = {(st.u - p.reference.u_dagger).norm():.2e}")]


def check_both_modes(k_max=200):
    from .cli import main  # late import: cli depends on this module

    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "both.cfg"
        spec = STANDARD["source_condition"]
        cfg.write_text(
            "benchmark.name = source_condition\n"
            f"benchmark.n = {spec.n}\nbenchmark.op_kind = {spec.op_kind}\n"
            f"benchmark.scale = {spec.scale}\n"
            f"mode = both\nk_max = {k_max}\nepsilon = 0\n")
        code = main(["run", "--config", str(cfg), "--out", tmp])
        if code != 0:
            return [Check("C11 Bregman vs PPM", False, f"run exited with {code}")]
        rows = {}
        for m in ("bregman", "ppm"):
            lines = (Path(tmp) / f"history.{m}.csv").read_text().splitlines()[1:]
            rows[m] = [line.split(",") for line in lines]
    ks = {m: [int(r[0]) for r in rows[m]] for m in rows}
    aligned = ks["bregman"] == ks["ppm"] == list(range(1, k_max + 1))
    worst = -math.inf
    for m in rows:
        H = np.array([float(r[3]) for r in rows[m]])
        worst = max(worst, float(np.max(np.diff(H))))
    ok = aligned and worst <= 1e-10
    return [Check("C11 Bregman vs PPM", ok,
                  f"aligned k=1..{k_max}: {aligned}; max H increase {worst:.2e} (<= 1e-10)")]


# -- rates (criteria 4 to 8) -------------------------------------------------

def check_h_gap():
    w = RATE_SETTINGS["h_gap"]["window"]
    sl = _slope(_history("bang_bang", "h_gap"), "H_gap", w)
    return [Check("C4 H-gap rate", _le(sl, -0.9), f"slope {sl if isinstance(sl, str) else f'{sl:.3f}'} "
                  f"over k in {list(w)} (<= -0.9)")]


def check_sc_rate():
    w = RATE_SETTINGS["sc"]["window"]
    h = _history("source_condition", "sc")
    su = _slope(h, "u_err_L2_sq", w)
    sl = _slope(h, "lambda_avg_err_sq", w)
    ok = _le(su, -0.8) and _le(sl, -1.7)
    fmt = lambda x: x if isinstance(x, str) else f"{x:.3f}"  # noqa: E731
    return [Check("C5 SC rate", ok, f"u_err slope {fmt(su)} (<= -0.8), "
                  f"lambda_avg slope {fmt(sl)} (<= -1.7) over k in {list(w)}")]


def check_asc_rate():
    out = []
    for key, s in (("asc_s0", 0), ("asc_s1", 1)):
        w = RATE_SETTINGS[key]["window"]
        sl = _slope(_history("bang_bang", key), "u_err_L2_sq", w)
        bound = -(s + 1) + 0.25
        out.append(Check(f"C6 ASC rate s={s}", _le(sl, bound),
                         f"slope {sl if isinstance(sl, str) else f'{sl:.3f}'} over k in {list(w)}, "
                         f"c_alpha={RATE_SETTINGS[key]['c_alpha']:g} (<= {bound})"))
    return out


def check_asc_measure():
    ref = _instance("bang_bang").reference
    k1, _ = verify_asc_measure(ref.p_dagger, ref.active)
    g = Grid.uniform(2001)
    p2 = GridFunction.from_callable(g, lambda x: (x - 0.5) ** 2)
    k2, _ = verify_asc_measure(p2, np.arange(g.n))
    ok = 0.9 <= k1 <= 1.1 and 0.45 <= k2 <= 0.55
    return [Check("C7 ASC measure", ok,
                  f"bang-bang kappa {k1:.3f} (in [0.9, 1.1]); (x-1/2)^2 kappa {k2:.3f} (in [0.45, 0.55])")]


def check_vi(seed=0):
    p = _instance("bang_bang")
    c = verify_strengthened_vi(p, p.reference, samples=1000, seed=seed)
    return [Check("C8 strengthened VI", c >= 1e-6, f"min ratio {c:.3e} over 1000 samples (>= 1e-6)")]


SUITES = {
    "adjoint": lambda seed: check_adjoint(seed),
    "oracle": lambda seed: check_oracle(seed),
    "rates": lambda seed: check_h_gap() + check_sc_rate() + check_asc_rate()
    + check_asc_measure() + check_vi(seed),
    "invariants": lambda seed: check_a2_a3() + check_monotonicity() + check_fixed_point()
    + check_nonunique() + check_both_modes(),
}


def run_suite(name, seed=0):
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    return SUITES[name](seed)
