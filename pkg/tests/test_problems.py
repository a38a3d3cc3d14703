import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from bregbox.constraints import stationarity_residual
from bregbox.diagnostics import objective_H, verify_asc_measure
from bregbox.errors import ConfigError, ConstructionError
from bregbox.operator import Grid, GridFunction
from bregbox.problems import (STANDARD, BenchmarkSpec, build, check_reference, make_attainable,
                              make_bang_bang_asc, make_mixed_asc, make_nonunique,
                              make_source_condition, pattern, standard)

NAMES = sorted(STANDARD)


@pytest.mark.parametrize("name", NAMES)
def test_standard_references_are_certified(bench, name):
    p = bench(name)
    ref = p.reference
    assert stationarity_residual(p.op, p.z, p.box, ref.u_dagger) <= 1e-8
    assert p.box.contains(ref.u_dagger)
    assert_allclose(ref.y_dagger.values, p.op.matvec(ref.u_dagger.values), atol=1e-13)
    p_rec = p.op.rmatvec(p.z.values - ref.y_dagger.values)
    assert_allclose(ref.p_dagger.values, p_rec, atol=1e-10)
    gap = (p.z - ref.y_dagger).norm()
    if name == "attainable":
        assert gap == 0.0
    else:
        assert gap > 1e-3
    check_reference(p, attainable=(name == "attainable"))


@pytest.mark.parametrize("name", NAMES)
def test_builders_are_deterministic(bench, name):
    a, b = bench(name), standard(name)
    assert_array_equal(a.z.values, b.z.values)
    assert_array_equal(a.reference.u_dagger.values, b.reference.u_dagger.values)


@pytest.mark.parametrize("name", ["source_condition", "bang_bang"])
def test_seed_puts_iteration_at_reference(bench, name):
    p = bench(name)
    ref = p.reference
    u = p.box.clip(p.op.rmatvec(ref.seed_mu.values))
    assert_allclose(u, ref.u_dagger.values, atol=1e-9)


def test_attainable():
    p = make_attainable(51, "poisson1d", (2.0, 3.0))
    assert_allclose(p.reference.u_dagger.values, 2.0)
    assert_allclose(p.reference.p_dagger.values, 0.0, atol=1e-15)
    assert objective_H(p.op, p.z, p.reference.u_dagger) == 0.0
    assert p.reference.source_w is not None
    g = Grid.uniform(51)
    q = make_attainable(51, "poisson1d", (2.0, 3.0), 2.5 + 0.2 * np.sin(np.pi * g.nodes))
    assert q.reference.source_w is None
    with pytest.raises(ConstructionError):
        make_attainable(51, "poisson1d", (2.0, 3.0), np.full(51, 3.5))


def test_source_condition_small_example():
    g = Grid.uniform(101)
    v = pattern("sin2pi", g)
    p = make_source_condition(101, "fredholm", (-1.0, 1.0), v, M=1e3)
    ref = p.reference
    assert_allclose(ref.source_w.values, 1e3 * v.values)
    assert_allclose(ref.u_dagger.values, np.clip(1e3 * ref.p_dagger.values, -1, 1), atol=1e-12)
    assert ref.active.size == 0 and ref.inactive.size == 101
    # effectively bang-bang: interior values only where p_dagger is tiny
    interior = np.abs(ref.u_dagger.values) < 1
    assert np.all(np.abs(ref.p_dagger.values[interior]) < 1e-3)


def test_source_condition_rejections():
    g = Grid.uniform(101)
    with pytest.raises(ConstructionError):
        make_source_condition(101, "fredholm", (-1.0, 1.0), np.zeros(101))
    with pytest.raises(ConstructionError):
        make_source_condition(101, "fredholm", (-1.0, 1.0), pattern("sin2pi", g), M=-1.0)
    with pytest.raises(ConstructionError):
        # u_dagger = P(S* w) stays interior where p_dagger != 0
        make_source_condition(101, "fredholm", (-1.0, 1.0), pattern("sin2pi", g), M=1.0)


def test_bang_bang_structure(bench):
    p = bench("bang_bang")
    ref = p.reference
    u, pd = ref.u_dagger.values, ref.p_dagger.values
    A = ref.active
    assert A.size > 0.9 * u.size
    assert np.all(np.isin(u[A], [-1.0, 1.0]))
    assert_array_equal(np.sign(u[A]), np.sign(pd[A]))
    assert ref.kappa == 1.0
    kappa, _ = verify_asc_measure(ref.p_dagger, A)
    assert kappa == pytest.approx(1.0, rel=0.1)
    assert_allclose(ref.source_w.values, 0.0)


def test_bang_bang_rejects_plateau(bench):
    mixed = bench("mixed")
    v = mixed.z - mixed.reference.y_dagger
    with pytest.raises(ConstructionError, match="plateau"):
        make_bang_bang_asc(201, "fredholm", (-1.0, 1.0), v)
    with pytest.raises(ConstructionError):
        make_bang_bang_asc(201, "fredholm", (-1.0, 1.0), np.zeros(201))


def test_mixed_structure(bench):
    p = bench("mixed")
    ref = p.reference
    x = p.box.grid.nodes
    on = (x > 0.4) & (x < 0.6)
    assert np.max(np.abs(ref.p_dagger.values[on])) <= 1e-10 * np.max(np.abs(ref.p_dagger.values))
    assert set(np.flatnonzero(on)) <= set(ref.inactive)
    u_on = ref.u_dagger.values[on]
    assert np.all(np.abs(u_on) < 1) and np.ptp(u_on) > 0.1
    sw = p.op.rmatvec(ref.source_w.values)
    I = ref.inactive
    assert_allclose(ref.u_dagger.values[I], np.clip(sw, -1, 1)[I], atol=1e-8)
    assert 0 < ref.kappa < 1
    assert np.all(np.isin(ref.u_dagger.values[ref.active], [-1.0, 1.0]))


def test_mixed_plateau_edge_cases():
    g = Grid.uniform(101)
    v = pattern("sin2pi", g)
    with pytest.raises(ConstructionError, match="empty"):
        make_mixed_asc(101, "fredholm", (-1.0, 1.0), (0.5, 0.5), v)
    full = make_mixed_asc(101, "fredholm", (-1.0, 1.0), (-1.0, 2.0), v, M=1e3)
    assert full.reference.active.size == 0
    assert_allclose(full.reference.source_w.values, 1e3 * v.values)


def test_nonunique_has_kernel_direction(bench):
    p = bench("nonunique")
    ref = p.reference
    assert not ref.unique
    n = p.box.grid.n
    S = np.column_stack([p.op.matvec(e) for e in np.eye(n)])
    region = np.arange(n // 3, 2 * n // 3)
    _, s, vt = np.linalg.svd(S[:, region])
    assert s[-1] < 1e-10 * s[0]
    d = np.zeros(n)
    d[region] = vt[-1]
    u2 = ref.u_dagger.values + 0.05 * d / np.abs(d).max()
    assert p.box.contains(GridFunction(p.box.grid, u2))
    assert abs(u2 - ref.u_dagger.values).max() > 1e-3
    assert stationarity_residual(p.op, p.z, p.box, GridFunction(p.box.grid, u2)) <= 1e-8


def test_nonunique_region_validation():
    with pytest.raises(ConstructionError):
        make_nonunique(n=30, region=(20, 10))
    with pytest.raises(ConstructionError):
        make_nonunique(n=30, region=(10, 40))


def test_pattern_lookup():
    g = Grid.uniform(5)
    assert_allclose(pattern("x_minus_half", g, 2.0).values, 2 * (g.nodes - 0.5))
    with pytest.raises(ConstructionError):
        pattern("sawtooth", g)


@pytest.mark.parametrize("kwargs, key", [
    (dict(name="spiky"), "benchmark.name"),
    (dict(n=2), "benchmark.n"),
    (dict(op_kind="wavelet"), "benchmark.op_kind"),
    (dict(lower=1.0, upper=0.0), "benchmark.lower"),
    (dict(pattern="noise"), "benchmark.pattern"),
    (dict(M=0.0), "benchmark.M"),
    (dict(kernel_width=0.0), "benchmark.kernel_width"),
])
def test_spec_validation(kwargs, key):
    with pytest.raises(ConfigError) as exc:
        BenchmarkSpec(**kwargs)
    assert exc.value.key == key


def test_spec_dict_round_trip():
    spec = STANDARD["mixed"]
    assert BenchmarkSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(ConfigError) as exc:
        BenchmarkSpec.from_dict({"name": "mixed", "colour": "red"})
    assert exc.value.key == "benchmark.colour"


def test_build_uses_spec(bench):
    p = build(BenchmarkSpec("bang_bang", n=101, op_kind="poisson1d", scale=0.25, seed=3))
    assert p.box.grid.n == 101 and p.name == "bang_bang"
    assert math.isfinite(p.reference.kappa)
