"""Benchmark instances with known solutions and certificates.

Every builder checks its own output: ``u_dagger`` must be stationary
(residual ``<= 1e-8``), the stored ``p_dagger`` must agree with the one
recomputed from ``(S, z, u_dagger)``, and non-attainable builders require
``||z - S u_dagger|| > 1e-3``.  Parameters that fail are refused with
:class:`ConstructionError` instead of producing a broken reference.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .bregman import ProblemInstance
from .constraints import BoxConstraints, stationarity_residual
from .diagnostics import ReferenceSolution, verify_asc_measure
from .errors import ConfigError, ConstructionError
from .operator import Grid, GridFunction, OperatorHandle, dense_operator, make_operator

__all__ = [
    "PATTERNS",
    "pattern",
    "BenchmarkSpec",
    "make_attainable",
    "make_source_condition",
    "make_bang_bang_asc",
    "make_mixed_asc",
    "make_nonunique",
    "build",
    "STANDARD",
    "standard",
    "check_reference",
]

PATTERNS = {
    "sin2pi": lambda x: np.sin(2 * np.pi * x),
    "sin4pi": lambda x: np.sin(4 * np.pi * x),
    "cos2pi": lambda x: np.cos(2 * np.pi * x),
    "x_minus_half": lambda x: x - 0.5,
    "square_x_minus_half": lambda x: (x - 0.5) ** 2,
    "one": lambda x: np.ones_like(x),
}

STATIONARITY_TOL = 1e-8


def pattern(name: str, grid: Grid, scale: float = 1.0) -> GridFunction:
    """A named function sampled on ``grid`` and multiplied by ``scale``."""
    try:
        f = PATTERNS[name]
    except KeyError:
        raise ConstructionError(f"unknown pattern {name!r}; known: {sorted(PATTERNS)}") from None
    return GridFunction(grid, scale * f(grid.nodes))


def _box(grid, box):
    if isinstance(box, BoxConstraints):
        return box
    lo, hi = box
    return BoxConstraints.constant(grid, lo, hi)


def _setup(n, op_kind, box, kernel_width=0.05, seed=0):
    grid = Grid.uniform(n)
    op = make_operator(op_kind, grid, kernel_width=kernel_width, seed=seed)
    return grid, op, _box(grid, box)


def _as_y(op: OperatorHandle, v) -> GridFunction:
    if isinstance(v, GridFunction):
        if not op.range_grid.matches(v.grid):
            raise ConstructionError("v_pattern must live on the range grid")
        return v
    if callable(v):
        return GridFunction(op.range_grid, v(op.range_grid.nodes))
    return GridFunction(op.range_grid, v)


def _adj(op, y):
    return GridFunction(op.domain_grid, op.rmatvec(y.values))


def check_reference(p: ProblemInstance, attainable=False):
    """Validate the reference of ``p``; raise :class:`ConstructionError` if broken."""
    ref = p.reference
    res = stationarity_residual(p.op, p.z, p.box, ref.u_dagger)
    if not res <= STATIONARITY_TOL:
        raise ConstructionError(f"u_dagger is not stationary: residual {res:.3e}")
    p_re = p.op.rmatvec(p.z.values - p.op.matvec(ref.u_dagger.values))
    scale = max(1.0, float(np.max(np.abs(p_re))))
    if np.max(np.abs(p_re - ref.p_dagger.values)) > 1e-10 * scale:
        raise ConstructionError("stored p_dagger disagrees with S*(z - S u_dagger)")
    gap = (p.z - ref.y_dagger).norm()
    if not attainable and not gap > 1e-3:
        raise ConstructionError(f"instance is (nearly) attainable: ||z - S u_dagger|| = {gap:.3e}")


def _split(p_dag: GridFunction, box: BoxConstraints, exclude=None):
    """Active set ``A = {|p| > tol}`` (minus ``exclude``) and its complement."""
    tol = box.default_tol()
    mask = np.abs(p_dag.values) > tol
    if exclude is not None:
        mask &= ~exclude
    idx = np.arange(p_dag.grid.n)
    return idx[~mask], idx[mask]


def _bang_bang(box, p_dag: np.ndarray, fill: np.ndarray):
    """``u_b`` where ``p > 0``, ``u_a`` where ``p < 0``, ``fill`` elsewhere."""
    u = box.clip(fill).copy()
    u[p_dag > 0] = box.upper.values[p_dag > 0]
    u[p_dag < 0] = box.lower.values[p_dag < 0]
    return u


def _seed_for(op, box, p_dag, u_dag, v, w, inactive):
    """A ``mu`` with ``P(S* mu) = u_dagger``, or ``None`` if none is found.

    Tries ``mu = w + M v`` with ``M`` large enough that ``S* mu`` has the
    sign of ``p_dagger`` and exceeds the box width on the active set.
    """
    a = np.abs(p_dag.values)
    base = op.rmatvec(w.values)
    act = np.setdiff1d(np.arange(a.size), inactive)
    M = 0.0
    if act.size:
        M = 2.0 * float(np.max((box.width[act] + np.abs(base[act]) + 1.0) / a[act]))
    mu = w + v * M
    err = np.max(np.abs(box.clip(op.rmatvec(mu.values)) - u_dag.values))
    return mu if err <= 1e-9 else None


def make_attainable(n, op_kind, box, u_interior: GridFunction | None = None, *,
                    kernel_width=0.05, seed=0, name="attainable") -> ProblemInstance:
    """``z = S u_dagger`` with ``u_dagger`` admissible (default ``P(0)``).

    Then ``p_dagger = 0`` and ``H(u_dagger) = 0``.  The source element
    ``w = 0`` is recorded only when ``u_dagger = P(0)``.
    """
    grid, op, box = _setup(n, op_kind, box, kernel_width, seed)
    p0 = box.clip(np.zeros(n))
    if u_interior is None:
        u_dag = GridFunction(grid, p0)
    else:
        u_dag = u_interior if isinstance(u_interior, GridFunction) else GridFunction(grid, u_interior)
        if not box.contains(u_dag, 0.0):
            raise ConstructionError("u_interior violates the box")
    z = GridFunction(op.range_grid, op.matvec(u_dag.values))
    at_p0 = bool(np.array_equal(u_dag.values, p0))
    zero_y = GridFunction.zeros(op.range_grid)
    ref = ReferenceSolution.from_solution(
        op, z, u_dag,
        source_w=zero_y if at_p0 else None,
        inactive=np.arange(n), active=np.arange(0),
        seed_mu=zero_y if at_p0 else None)
    p = ProblemInstance(op, z, box, ref, name)
    check_reference(p, attainable=True)
    return p


def default_amplification(box: BoxConstraints, p_dag: GridFunction) -> float:
    """``1e3 * ||u_b - u_a||_inf / ||p_dagger||_inf``."""
    pmax = float(np.max(np.abs(p_dag.values)))
    if pmax == 0.0:
        raise ConstructionError("p_dagger vanishes identically")
    return 1e3 * float(np.max(box.width)) / pmax


def make_source_condition(n, op_kind, box, v_pattern, M=None, *, kernel_width=0.05,
                          seed=0, name="source_condition") -> ProblemInstance:
    """Non-attainable instance with ``u_dagger = P(S* w)``, ``w = M v``.

    ``p_dagger = S* v`` and ``z = S u_dagger + v``.  On a grid the
    projection reproduces the sign pattern of ``p_dagger`` at every node
    where ``M |p_dagger| >= ||u_b - u_a||``; ``M`` too small leaves
    interior values where ``p_dagger != 0`` and is refused.
    """
    grid, op, box = _setup(n, op_kind, box, kernel_width, seed)
    v = _as_y(op, v_pattern)
    if not np.any(v.values != 0):
        raise ConstructionError("v_pattern must be nonzero")
    p_dag = _adj(op, v)
    if M is None:
        M = default_amplification(box, p_dag)
    if not M > 0:
        raise ConstructionError("M must be positive")
    w = v * M
    u_dag = GridFunction(grid, box.clip(op.rmatvec(w.values)))
    z = GridFunction(op.range_grid, op.matvec(u_dag.values)) + v
    inactive = np.arange(n)
    ref = ReferenceSolution(u_dag, GridFunction(op.range_grid, op.matvec(u_dag.values)),
                            p_dag, source_w=w, inactive=inactive, active=np.arange(0),
                            seed_mu=w)
    p = ProblemInstance(op, z, box, ref, name)
    try:
        check_reference(p)
    except ConstructionError as exc:
        raise ConstructionError(f"source-condition instance rejected (M={M:g}): {exc}") from None
    return p


def _has_plateau(p_dag: np.ndarray, tol: float) -> bool:
    """True if ``|p|`` is below ``tol`` at three or more consecutive nodes."""
    small = np.abs(p_dag) <= tol
    run = 0
    for s in small:
        run = run + 1 if s else 0
        if run >= 3:
            return True
    return False


def make_bang_bang_asc(n, op_kind, box, v_pattern, *, kernel_width=0.05, seed=0,
                       name="bang_bang") -> ProblemInstance:
    """Bang-bang ``u_dagger`` from the sign of ``p_dagger = S* v``; ``z = S u_dagger + v``.

    ``A = {|p_dagger| > tol}``, ``kappa = 1`` and ``w = 0``.  Nodes with
    ``p_dagger = 0`` (within tol) take ``P(0)``.  A ``p_dagger`` that is
    flat zero over three or more consecutive nodes is refused.
    """
    grid, op, box = _setup(n, op_kind, box, kernel_width, seed)
    v = _as_y(op, v_pattern)
    if not np.any(v.values != 0):
        raise ConstructionError("v_pattern must be nonzero")
    p_dag = _adj(op, v)
    tol = box.default_tol()
    inner = np.abs(p_dag.values[1:-1]) if op.kind == "poisson1d" else np.abs(p_dag.values)
    if _has_plateau(inner, tol):
        raise ConstructionError("p_dagger has a zero plateau; use make_mixed_asc")
    inactive, active = _split(p_dag, box)
    pd = p_dag.values.copy()
    pd[inactive] = 0.0
    u_dag = GridFunction(grid, _bang_bang(box, pd, np.zeros(n)))
    y_dag = GridFunction(op.range_grid, op.matvec(u_dag.values))
    z = y_dag + v
    ref = ReferenceSolution(u_dag, y_dag, p_dag, source_w=GridFunction.zeros(op.range_grid),
                            inactive=inactive, active=active, kappa=1.0,
                            seed_mu=_seed_for(op, box, p_dag, u_dag, v,
                                              GridFunction.zeros(op.range_grid), inactive))
    p = ProblemInstance(op, z, box, ref, name)
    check_reference(p)
    return p


def make_mixed_asc(n, op_kind, box, plateau, v_pattern, M=None, *, g_amplitude=0.5,
                   kernel_width=0.05, seed=0, name="mixed") -> ProblemInstance:
    """Instance whose adjoint state vanishes on ``plateau`` and is bang-bang elsewhere.

    ``v`` is corrected by the least-squares projection onto
    ``{v : (S* v)_i = 0 for nodes i in the plateau}``.  On the plateau
    ``u_dagger = P(S* w)`` with ``w`` the minimum-norm element whose adjoint
    image equals a smooth bump of height ``g_amplitude`` (relative to the
    box) there, so ``u_dagger`` is not trivially constant on ``I``.  A plateau
    covering every node falls back to :func:`make_source_condition` with
    amplitude ``M``.
    """
    grid, op, box = _setup(n, op_kind, box, kernel_width, seed)
    lo, hi = plateau
    on = (grid.nodes > lo) & (grid.nodes < hi)
    if not on.any() or not hi > lo:
        raise ConstructionError("plateau is empty; use make_bang_bang_asc")
    if on.all():
        return make_source_condition(n, op_kind, box, v_pattern, M, kernel_width=kernel_width,
                                     seed=seed, name=name)
    v0 = _as_y(op, v_pattern)
    adj = op.adjoint_matrix
    B = adj[on, :]
    # v := v0 - B^+ B v0 (Euclidean projection onto the null space of B)
    corr, *_ = np.linalg.lstsq(B, B @ v0.values, rcond=None)
    v = GridFunction(op.range_grid, v0.values - corr)
    p_dag = _adj(op, v)
    pmax = float(np.max(np.abs(p_dag.values)))
    if pmax == 0.0:
        raise ConstructionError("corrected v has a vanishing adjoint image")
    if np.max(np.abs(p_dag.values[on])) > 1e-10 * max(1.0, pmax):
        raise ConstructionError(
            f"could not flatten p_dagger on the plateau: max |p| = {np.max(np.abs(p_dag.values[on])):.3e}")
    p_vals = p_dag.values.copy()
    p_vals[on] = 0.0
    # source element: S* w = bump on the plateau
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    x = grid.nodes[on]
    a, b = box.lower.values[on], box.upper.values[on]
    bump = 0.5 * (a + b) + g_amplitude * 0.5 * (b - a) * np.cos(0.5 * np.pi * (x - mid) / half)
    w_vals, *_ = np.linalg.lstsq(B, bump, rcond=None)
    w = GridFunction(op.range_grid, w_vals)
    sw = op.rmatvec(w_vals)
    if np.max(np.abs(sw[on] - bump)) > 1e-8:
        raise ConstructionError("could not match the source element on the plateau")
    inactive, active = _split(GridFunction(grid, p_vals), box, exclude=on)
    p_vals[inactive] = 0.0
    # chi_I u_dagger = chi_I P(S* w)
    u_dag = GridFunction(grid, _bang_bang(box, p_vals, sw))
    y_dag = GridFunction(op.range_grid, op.matvec(u_dag.values))
    z = y_dag + v
    kappa, _ = verify_asc_measure(p_dag, active) if active.size else (math.inf, 0.0)
    ref = ReferenceSolution(u_dag, y_dag, p_dag, source_w=w, inactive=inactive,
                            active=active, kappa=kappa,
                            seed_mu=_seed_for(op, box, p_dag, u_dag, v, w, inactive))
    p = ProblemInstance(op, z, box, ref, name)
    if not np.allclose(u_dag.values[inactive], box.clip(sw)[inactive], rtol=0, atol=1e-8):
        raise ConstructionError("u_dagger differs from P(S* w) on I")
    check_reference(p)
    return p


def make_nonunique(n=30, m=40, region=(10, 20), *, box=(-1.0, 1.0), seed=0,
                   name="nonunique") -> ProblemInstance:
    """Dense ``S`` with a kernel vector supported on ``region`` and ``p_dagger = 0`` there.

    ``u_dagger`` is interior on the region, so ``u_dagger + t d`` with ``d`` in
    the kernel is another minimizer for small ``t``: the solution is not
    unique, only ``y_dagger`` is.  Off the region ``u_dagger`` is bang-bang.
    """
    rng = np.random.default_rng(seed)
    i0, i1 = region
    if not 0 <= i0 < i1 <= n:
        raise ConstructionError("region must be a nonempty index range inside the grid")
    dom = Grid.uniform(n)
    rng_grid = Grid.unit(m)
    box = _box(dom, box)
    wu = dom.weights
    d = np.zeros(n)
    t = np.linspace(0, 1, i1 - i0 + 2)[1:-1]
    d[i0:i1] = np.sin(np.pi * t)
    m0 = rng.standard_normal((m, n)) / np.sqrt(n)
    # remove d from the row space in the weighted inner product: M d = 0
    m1 = m0 - np.outer(m0 @ d, wu * d) / np.dot(wu * d, d)
    op = dense_operator(m1, dom, rng_grid)
    on = np.zeros(n, dtype=bool)
    on[i0:i1] = True
    B = op.adjoint_matrix[on, :]
    v0 = rng.standard_normal(m)
    corr, *_ = np.linalg.lstsq(B, B @ v0, rcond=None)
    v = GridFunction(rng_grid, v0 - corr)
    p_dag = _adj(op, v)
    p_vals = p_dag.values.copy()
    p_vals[on] = 0.0
    mid = 0.5 * (box.lower.values + box.upper.values)
    fill = np.where(on, mid + 0.25 * box.width * np.cos(np.linspace(0, 3, n)), 0.0)
    inactive, active = _split(GridFunction(dom, p_vals), box, exclude=on)
    p_vals[inactive] = 0.0
    u_dag = GridFunction(dom, _bang_bang(box, p_vals, fill))
    y_dag = GridFunction(rng_grid, op.matvec(u_dag.values))
    z = y_dag + v
    B_I = op.adjoint_matrix[inactive, :]
    w_vals, *_ = np.linalg.lstsq(B_I, u_dag.values[inactive], rcond=None)
    w = GridFunction(rng_grid, w_vals)
    ref = ReferenceSolution(u_dag, y_dag, p_dag, inactive=inactive, active=active,
                            seed_mu=_seed_for(op, box, p_dag, u_dag, v, w, inactive),
                            unique=False)
    p = ProblemInstance(op, z, box, ref, name)
    check_reference(p)
    return p


# -- declarative specs ------------------------------------------------------

BUILDERS = ("attainable", "source_condition", "bang_bang", "mixed", "nonunique")


@dataclass(frozen=True)
class BenchmarkSpec:
    """Declarative description of a benchmark; :func:`build` is deterministic.

    ``scale`` multiplies the named ``pattern`` to give ``v``.  ``M = None``
    selects the default amplification.  ``plateau`` is used by ``mixed``
    only.
    """

    name: str = "bang_bang"
    n: int = 201
    op_kind: str = "poisson1d"
    lower: float = -1.0
    upper: float = 1.0
    pattern: str = "sin2pi"
    scale: float = 1.0
    M: float | None = None
    plateau: tuple = (0.4, 0.6)
    kernel_width: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.name not in BUILDERS:
            raise ConfigError("benchmark.name", f"unknown builder {self.name!r}; expected one of {BUILDERS}")
        if self.n < 3:
            raise ConfigError("benchmark.n", "need at least 3 nodes")
        if self.op_kind not in ("dense", "fredholm", "poisson1d"):
            raise ConfigError("benchmark.op_kind", f"unknown operator kind {self.op_kind!r}")
        if not self.lower <= self.upper:
            raise ConfigError("benchmark.lower", "lower bound exceeds upper bound")
        if self.pattern not in PATTERNS:
            raise ConfigError("benchmark.pattern", f"unknown pattern {self.pattern!r}")
        if self.M is not None and not self.M > 0:
            raise ConfigError("benchmark.M", "must be positive")
        if not self.kernel_width > 0:
            raise ConfigError("benchmark.kernel_width", "must be positive")
        object.__setattr__(self, "plateau", tuple(float(x) for x in self.plateau))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"benchmark.{key}", "unknown key")
        return cls(**d)


def build(spec: BenchmarkSpec) -> ProblemInstance:
    """Construct the instance described by ``spec``."""
    box = (spec.lower, spec.upper)
    common = dict(kernel_width=spec.kernel_width, seed=spec.seed)
    if spec.name == "nonunique":
        return make_nonunique(n=spec.n, m=spec.n + spec.n // 3,
                              region=(spec.n // 3, 2 * spec.n // 3), box=box, seed=spec.seed)
    grid = Grid.uniform(spec.n)
    v = pattern(spec.pattern, grid, spec.scale)
    if spec.name == "attainable":
        return make_attainable(spec.n, spec.op_kind, box, **common)
    if spec.name == "source_condition":
        return make_source_condition(spec.n, spec.op_kind, box, v, spec.M, **common)
    if spec.name == "bang_bang":
        return make_bang_bang_asc(spec.n, spec.op_kind, box, v, **common)
    return make_mixed_asc(spec.n, spec.op_kind, box, spec.plateau, v, spec.M, **common)


STANDARD = {
    "attainable": BenchmarkSpec("attainable", n=51, op_kind="poisson1d", lower=2.0, upper=3.0),
    "source_condition": BenchmarkSpec("source_condition", n=401, op_kind="fredholm", scale=0.03),
    "bang_bang": BenchmarkSpec("bang_bang", n=201, op_kind="poisson1d", scale=0.25),
    "mixed": BenchmarkSpec("mixed", n=201, op_kind="fredholm"),
    "nonunique": BenchmarkSpec("nonunique", n=30, op_kind="dense"),
}


def standard(name: str) -> ProblemInstance:
    """One of the named standard benchmarks in :data:`STANDARD`."""
    return build(STANDARD[name])
