import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregbox.bregman import BregmanState, Schedule, init_state, step
from bregbox.diagnostics import (METRIC_COLUMNS, ReferenceSolution, StrengthenedVIViolation,
                                 fit_rate, gamma_of, objective_H, record_metrics,
                                 verify_asc_measure, verify_strengthened_vi)
from bregbox.errors import DataError
from bregbox.operator import Grid, GridFunction


def test_gamma_of():
    assert gamma_of(Schedule.constant(1.0), 7) == 7.0
    assert gamma_of(Schedule.polynomial(1.0, 1.0), 3) == 6.0
    assert gamma_of(Schedule.polynomial(2.0, 0.5), 2) == pytest.approx((1 + math.sqrt(2)) / 2, abs=1e-12)
    assert gamma_of(Schedule.constant(3.0), 0) == 0.0
    with pytest.raises(ValueError):
        gamma_of(Schedule.constant(), -1)


def test_gamma_matches_state(t1):
    sched = Schedule.explicit([0.5, 2.0, 0.25])
    st = init_state(t1)
    for _ in range(5):
        st = step(st, t1, sched)
    assert st.gamma == pytest.approx(gamma_of(sched, 5), rel=1e-15)


def test_objective_t1(t1):
    st = step(init_state(t1), t1, Schedule.constant(1.0))
    assert objective_H(t1.op, t1.z, st.u) == pytest.approx(2.53125, abs=1e-14)
    assert st.history[-1].H_uk == pytest.approx(2.53125, abs=1e-14)


def test_metric_columns_order():
    assert METRIC_COLUMNS[:3] == ("k", "alpha_k", "gamma_k")
    assert METRIC_COLUMNS[-2:] == ("subproblem_iters", "wall_ms")
    assert len(METRIC_COLUMNS) == 13


def test_metrics_without_reference(t1):
    row = init_state(t1).history[0]
    assert row.k == 0 and row.alpha_k is None and row.gamma_k == 0.0
    for name in ("H_gap", "u_err_L2_sq", "u_err_L1_A", "breg_dist_ref", "v_k_norm",
                 "lambda_avg_err_sq"):
        assert getattr(row, name) is None


def test_metrics_at_reference(bench):
    p = bench("bang_bang")
    ref = p.reference
    st = BregmanState(3, ref.u_dagger, None, ref.u_dagger + ref.p_dagger, 2.0, alpha=1.0,
                      v=GridFunction.zeros(p.op.range_grid))
    row = record_metrics(st, p)
    assert row.H_gap == pytest.approx(0.0, abs=1e-15)
    assert row.u_err_L2_sq == 0.0 and row.u_err_L1_A == 0.0
    assert row.breg_dist_ref == pytest.approx(0.0, abs=1e-15)
    assert row.stat_res <= 1e-8
    assert row.v_k_norm == 0.0
    # lambda / gamma vs p_dagger
    d = (ref.u_dagger + ref.p_dagger) / 2.0 - ref.p_dagger
    assert row.lambda_avg_err_sq == pytest.approx(d.norm() ** 2)


def test_h_gap_matches_difference(bench):
    p = bench("mixed")
    st = init_state(p)
    for _ in range(3):
        st = step(st, p, Schedule.constant(1.0))
    row = st.history[-1]
    direct = objective_H(p.op, p.z, st.u) - objective_H(p.op, p.z, p.reference.u_dagger)
    assert row.H_gap == pytest.approx(direct, rel=1e-6, abs=1e-14)


def _hist(values, k0=1):
    return [{"k": k, "m": v} for k, v in enumerate(values, k0)]


def test_fit_rate_power_law():
    ks = np.arange(1, 101)
    slope, intercept, r2 = fit_rate(_hist(3.0 * ks ** -2.0), "m")
    assert slope == pytest.approx(-2.0, abs=1e-12)
    assert intercept == pytest.approx(math.log(3.0), abs=1e-10)
    assert r2 == pytest.approx(1.0)


def test_fit_rate_log_factor():
    ks = np.arange(1, 1001)
    slope, _, _ = fit_rate(_hist(5.0 * np.log(ks + 1) / ks), "m")
    assert -1.0 < slope < -0.75


def test_fit_rate_constant():
    slope, _, r2 = fit_rate(_hist(np.full(50, 0.3)), "m")
    assert slope == 0.0 and r2 == 1.0


def test_fit_rate_range():
    ks = np.arange(1, 101, dtype=float)
    vals = np.where(ks < 50, ks ** -1.0, 50.0 * ks ** -2.0)
    assert fit_rate(_hist(vals), "m", (50, None))[0] == pytest.approx(-2.0)
    assert fit_rate(_hist(vals), "m", (10, 40))[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("values, k_range", [
    (np.ones(9), (1, None)),
    (np.r_[np.ones(20), 0.0], (1, None)),
    (np.r_[np.ones(20), -1.0], (1, None)),
    (np.ones(30), (40, None)),
])
def test_fit_rate_data_errors(values, k_range):
    with pytest.raises(DataError):
        fit_rate(_hist(values), "m", k_range)


def test_fit_rate_absent_values():
    h = _hist(np.ones(20))
    h[12]["m"] = None
    with pytest.raises(DataError):
        fit_rate(h, "m", (1, None))


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 0.5), st.floats(1e-6, 1e6))
def test_fit_rate_scaling_invariance(r, c):
    ks = np.arange(1, 60, dtype=float)
    vals = ks ** r * (1 + 0.1 * np.sin(ks))
    s1, i1, _ = fit_rate(_hist(vals), "m")
    s2, i2, _ = fit_rate(_hist(c * vals), "m")
    assert s2 == pytest.approx(s1, abs=1e-9)
    assert i2 - i1 == pytest.approx(math.log(c), abs=1e-8)


def test_asc_linear():
    g = Grid.uniform(2001)
    p = GridFunction(g, g.nodes - 0.5)
    kappa, c = verify_asc_measure(p, np.arange(g.n))
    assert kappa == pytest.approx(1.0, rel=0.05)
    assert c == pytest.approx(2.0, rel=0.05)


def test_asc_quadratic():
    g = Grid.uniform(2001)
    p = GridFunction(g, (g.nodes - 0.5) ** 2)
    kappa, c = verify_asc_measure(p, np.arange(g.n))
    assert kappa == pytest.approx(0.5, rel=0.05)
    assert c == pytest.approx(2.0, rel=0.1)


def test_asc_explicit_grid():
    g = Grid.uniform(2001)
    p = GridFunction(g, g.nodes - 0.5)
    kappa, _ = verify_asc_measure(p, np.arange(g.n), np.logspace(-2.5, -0.5, 15))
    assert kappa == pytest.approx(1.0, rel=0.05)
    with pytest.raises(ValueError):
        verify_asc_measure(p, np.arange(g.n), [0.1, 0.01])


def test_asc_bounded_away_is_vacuous():
    g = Grid.uniform(101)
    p = GridFunction(g, 1.0 + g.nodes)
    assert verify_asc_measure(p, np.arange(g.n)) == (math.inf, 0.0)
    assert verify_asc_measure(p, np.arange(0)) == (math.inf, 0.0)


def test_asc_on_benchmark(bench):
    ref = bench("bang_bang").reference
    kappa, _ = verify_asc_measure(ref.p_dagger, ref.active)
    assert kappa == pytest.approx(1.0, rel=0.1)


def test_vi_positive_on_bang_bang(bench):
    p = bench("bang_bang")
    val = verify_strengthened_vi(p, p.reference, samples=600)
    assert 0 < val < math.inf


def test_vi_vacuous_without_active_set(bench):
    p = bench("source_condition")
    assert verify_strengthened_vi(p, p.reference, samples=10) == math.inf


def test_vi_detects_broken_reference(bench):
    p = bench("bang_bang")
    ref = p.reference
    bad = ReferenceSolution(ref.u_dagger, ref.y_dagger, -ref.p_dagger, inactive=ref.inactive,
                            active=ref.active, kappa=1.0)
    with pytest.raises(StrengthenedVIViolation) as exc:
        verify_strengthened_vi(p, bad, samples=50)
    assert p.box.contains(exc.value.u)


def test_vi_needs_kappa(bench):
    p = bench("bang_bang")
    ref = p.reference
    bare = ReferenceSolution(ref.u_dagger, ref.y_dagger, ref.p_dagger, active=ref.active)
    with pytest.raises(ValueError):
        verify_strengthened_vi(p, bare)
