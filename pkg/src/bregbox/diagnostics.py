"""Reference-based error metrics, rate fitting and checks of the rate hypotheses."""
from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .constraints import BoxConstraints, bregman_distance, stationarity_residual
from .errors import DataError
from .operator import GridFunction, OperatorHandle

__all__ = [
    "ReferenceSolution",
    "MetricRow",
    "METRIC_COLUMNS",
    "objective_H",
    "gamma_of",
    "record_metrics",
    "fit_rate",
    "verify_asc_measure",
    "verify_strengthened_vi",
    "StrengthenedVIViolation",
]


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    """Known solution ``u_dagger`` of a benchmark and its certificates.

    ``source_w`` is the element ``w`` of the (local) source condition,
    ``inactive``/``active`` the index sets ``I``/``A`` and ``kappa`` the
    active-set exponent.  ``seed_mu`` is some ``mu`` with
    ``u_dagger = P(S* mu)``; starting the iteration from it puts the
    subgradient in ``dJ(u_dagger)``.  ``unique`` is False when other
    minimizers exist (only ``y_dagger`` is then determined).
    """

    u_dagger: GridFunction
    y_dagger: GridFunction
    p_dagger: GridFunction
    source_w: GridFunction | None = None
    inactive: np.ndarray | None = None
    active: np.ndarray | None = None
    kappa: float | None = None
    seed_mu: GridFunction | None = None
    unique: bool = True

    @classmethod
    def from_solution(cls, op: OperatorHandle, z: GridFunction, u_dagger: GridFunction, **kw):
        y = GridFunction(op.range_grid, op.matvec(u_dagger.values))
        p = GridFunction(op.domain_grid, op.rmatvec(z.values - y.values))
        return cls(u_dagger, y, p, **kw)


METRIC_COLUMNS = (
    "k", "alpha_k", "gamma_k", "H_uk", "H_gap", "stat_res", "u_err_L2_sq",
    "u_err_L1_A", "breg_dist_ref", "v_k_norm", "lambda_avg_err_sq",
    "subproblem_iters", "wall_ms",
)


@dataclass
class MetricRow:
    """One line of the convergence history; ``None`` marks an absent metric."""

    k: int
    alpha_k: float | None
    gamma_k: float
    H_uk: float
    H_gap: float | None
    stat_res: float
    u_err_L2_sq: float | None
    u_err_L1_A: float | None
    breg_dist_ref: float | None
    v_k_norm: float | None
    lambda_avg_err_sq: float | None
    subproblem_iters: int
    wall_ms: float

    def as_tuple(self):
        return tuple(getattr(self, f.name) for f in fields(self))


def objective_H(op: OperatorHandle, z: GridFunction, u: GridFunction) -> float:
    """``H(u) = 1/2 ||S u - z||_Y^2``."""
    r = op.matvec(u.values) - z.values
    return float(0.5 * np.dot(op.range_grid.weights, r * r))


def gamma_of(sched, k: int) -> float:
    """``gamma_k = sum_{j=1}^k 1/alpha_j``; ``gamma_0 = 0``."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return math.fsum(1.0 / sched.alpha(j) for j in range(1, k + 1))


def record_metrics(state, p) -> MetricRow:
    """Evaluate the history metrics of ``state`` for problem instance ``p``.

    Reference-dependent entries are ``None`` when ``p.reference`` is absent.
    The H gap is evaluated as ``1/2||S e||^2 - <e, p_dagger>`` with
    ``e = u_k - u_dagger``, which equals ``H(u_k) - H(u_dagger)`` without
    the cancellation of subtracting two nearly equal objective values.
    """
    op, z, box, ref = p.op, p.z, p.box, p.reference
    u = state.u
    row = dict(
        k=state.k,
        alpha_k=state.alpha,
        gamma_k=state.gamma,
        H_uk=objective_H(op, z, u),
        H_gap=None,
        stat_res=stationarity_residual(op, z, box, u),
        u_err_L2_sq=None,
        u_err_L1_A=None,
        breg_dist_ref=None,
        v_k_norm=None,
        lambda_avg_err_sq=None,
        subproblem_iters=state.subproblem_iters,
        wall_ms=state.wall_ms,
    )
    if ref is not None:
        e = u - ref.u_dagger
        se = op.matvec(e.values)
        row["H_gap"] = float(0.5 * np.dot(op.range_grid.weights, se * se) - e.inner(ref.p_dagger))
        row["u_err_L2_sq"] = e.norm() ** 2
        if ref.active is not None:
            row["u_err_L1_A"] = e.l1(ref.active)
        w = state.lam - u
        row["breg_dist_ref"] = bregman_distance(box, ref.u_dagger, u, w)
        if state.v is not None:
            row["v_k_norm"] = state.v.norm()
        if state.k > 0 and state.mode == "bregman":
            d = state.lam / state.gamma - ref.p_dagger
            row["lambda_avg_err_sq"] = d.norm() ** 2
    return MetricRow(**row)


def _column(history, name):
    out = []
    for row in history:
        out.append(row[name] if isinstance(row, dict) else getattr(row, name))
    return out


def fit_rate(history, metric_name: str, k_range=(10, None)):
    """Least-squares fit of ``log metric`` against ``log k``.

    Parameters
    ----------
    history : sequence of MetricRow or dict
    metric_name : str
        Column to fit, e.g. ``"u_err_L2_sq"``.
    k_range : (k_min, k_max)
        Inclusive range of iteration indices; ``None`` means unbounded.

    Returns
    -------
    slope, intercept, r2
    """
    k_min, k_max = k_range
    ks = np.array(_column(history, "k"), dtype=float)
    vals = _column(history, metric_name)
    sel = (ks >= (k_min if k_min is not None else -np.inf)) & (ks <= (k_max if k_max is not None else np.inf))
    ks = ks[sel]
    vals = [v for v, s in zip(vals, sel) if s]
    if len(ks) < 10:
        raise DataError(f"need at least 10 rows to fit {metric_name}, got {len(ks)}")
    if any(v is None for v in vals):
        raise DataError(f"{metric_name} is absent on part of the range")
    y = np.array(vals, dtype=float)
    if np.any(~(y > 0)):
        raise DataError(f"{metric_name} must be strictly positive on the fit range")
    if np.any(ks <= 0):
        raise DataError("k must be positive on the fit range")
    lx, ly = np.log(ks), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid ** 2)) / ss_tot
    if abs(slope) < 1e-12 and ss_tot < 1e-24:
        slope = 0.0
    return float(slope), float(intercept), r2


def verify_asc_measure(p_dagger: GridFunction, active, eps_grid=None):
    """Fit ``m(eps) = |{x in A : 0 < |p(x)| < eps}| ~ c eps^kappa``.

    Values of ``eps`` where ``m`` is zero or equals the whole measure of
    ``A`` are excluded.  Without ``eps_grid`` the measure is sampled just
    above each nodal value ``|p_i|``, ``i in A``, with
    ``|p_i| <= max|p|/4``; these are the points where the discrete measure
    function jumps, so no staircase bias enters the fit.

    Returns
    -------
    kappa_est, c_est
        ``(inf, 0.0)`` when ``m`` vanishes on the whole grid, i.e. the
        condition holds vacuously.
    """
    idx = np.asarray(active, dtype=int)
    h = p_dagger.grid.weights[idx]
    a = np.abs(p_dagger.values[idx])
    pos = a > 0
    if eps_grid is None:
        if not pos.any():
            return math.inf, 0.0
        atoms = np.unique(a[pos])
        atoms = atoms[atoms <= 0.25 * atoms.max()]
        eps = atoms * (1.0 + 1e-9)
    else:
        eps = np.asarray(eps_grid, dtype=float)
        if np.any(eps <= 0) or np.any(np.diff(eps) <= 0):
            raise ValueError("eps_grid must be positive and increasing")
    total = float(h.sum())
    m = np.array([h[pos & (a < e)].sum() for e in eps])
    keep = (m > 0) & (m < total * (1 - 1e-12))
    if not keep.any():
        return math.inf, 0.0
    if keep.sum() < 2:
        raise DataError("measure function is nontrivial at fewer than two eps values")
    kappa, logc = np.polyfit(np.log(eps[keep]), np.log(m[keep]), 1)
    return float(kappa), float(np.exp(logc))


class StrengthenedVIViolation(ValueError):
    """A sampled ``u`` made the strengthened variational ratio nonpositive."""

    def __init__(self, message, u):
        super().__init__(message)
        self.u = u


def _vi_samples(box: BoxConstraints, u_dag: np.ndarray, active: np.ndarray, rng, count):
    a, b = box.lower.values, box.upper.values
    n = u_dag.size
    for i in range(count):
        kind = i % 3
        if kind == 0:
            # anywhere in the box
            yield rng.uniform(a, b)
        elif kind == 1:
            # a random window replaced by random admissible values
            lo = rng.integers(0, n)
            hi = min(n, lo + rng.integers(1, max(2, n // 4)))
            u = u_dag.copy()
            u[lo:hi] = rng.uniform(a[lo:hi], b[lo:hi])
            yield u
        else:
            # small moves from u_dagger towards random admissible points
            t = 10.0 ** rng.uniform(-6, 0)
            target = rng.uniform(a, b)
            mask = rng.random(n) < rng.uniform(0.05, 1.0)
            u = u_dag.copy()
            u[mask] += t * (target[mask] - u_dag[mask])
            yield u


def verify_strengthened_vi(p, ref: ReferenceSolution, samples=1000, seed=0) -> float:
    """Smallest sampled ``<-p, u - u_dagger> / ||u - u_dagger||_{L1(A)}^(1 + 1/kappa)``.

    Feasible samples mix uniform draws, windowed replacements and small
    perturbations of ``u_dagger``.  Samples that coincide with ``u_dagger``
    on ``A`` are skipped (the ratio is 0/0 there).  Returns ``inf`` when
    ``A`` is empty.

    Raises
    ------
    StrengthenedVIViolation
        If some sample gives a nonpositive ratio; the offending ``u`` is kept
        on the exception.
    """
    if ref.active is None:
        raise ValueError("reference needs an active set")
    active = np.asarray(ref.active, dtype=int)
    if active.size == 0:
        return math.inf
    if ref.kappa is None:
        raise ValueError("reference needs kappa")
    rng = np.random.default_rng(seed)
    grid = ref.u_dagger.grid
    h = grid.weights
    u_dag = ref.u_dagger.values
    pdag = ref.p_dagger.values
    power = 1.0 + 1.0 / ref.kappa
    best = math.inf
    for u in _vi_samples(p.box, u_dag, active, rng, samples):
        d = u - u_dag
        l1 = float(np.dot(h[active], np.abs(d[active])))
        if l1 == 0.0:
            continue
        num = -float(np.dot(h * pdag, d))
        ratio = num / l1 ** power
        if not ratio > 0:
            raise StrengthenedVIViolation(
                f"nonpositive ratio {ratio:.3e}", GridFunction(grid, u))
        best = min(best, ratio)
    return best
