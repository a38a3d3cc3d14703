"""Box constraints ``u_a <= u <= u_b``: projection, normal cone, stationarity."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError, InfeasibleError, NormalConeError
from .operator import Grid, GridFunction, OperatorHandle

__all__ = [
    "BoxConstraints",
    "ActiveSetReport",
    "project",
    "normal_cone_residual",
    "normal_cone_violation",
    "stationarity_residual",
    "classify_active",
    "bregman_distance",
    "default_theta",
]


@dataclass(frozen=True, eq=False)
class BoxConstraints:
    """The admissible set ``U_ad = {u : lower <= u <= upper}`` (finite bounds)."""

    lower: GridFunction
    upper: GridFunction

    def __post_init__(self):
        if not self.lower.grid.matches(self.upper.grid):
            raise GridMismatchError("bounds live on different grids")
        a, b = self.lower.values, self.upper.values
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("box bounds must be finite")
        if np.any(a > b):
            raise ValueError("lower bound exceeds upper bound")

    @classmethod
    def constant(cls, grid: Grid, lower, upper):
        return cls(GridFunction(grid, lower), GridFunction(grid, upper))

    @property
    def grid(self) -> Grid:
        return self.lower.grid

    @property
    def width(self) -> np.ndarray:
        return self.upper.values - self.lower.values

    def default_tol(self) -> float:
        """Activity band ``1e-9 * (1 + ||u_b - u_a||_inf)``."""
        return 1e-9 * (1.0 + float(np.max(self.width)))

    def clip(self, v: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(v, self.lower.values), self.upper.values)

    def contains(self, u: GridFunction, tol=None) -> bool:
        tol = self.default_tol() if tol is None else tol
        v = u.values
        return bool(np.all(v >= self.lower.values - tol) and np.all(v <= self.upper.values + tol))

    def _check(self, u):
        if not self.grid.matches(u.grid):
            raise GridMismatchError("function and box live on different grids")


@dataclass(frozen=True)
class ActiveSetReport:
    lower_active: np.ndarray
    upper_active: np.ndarray
    inactive: np.ndarray
    tol: float

    def counts(self):
        return len(self.lower_active), len(self.upper_active), len(self.inactive)


def project(box: BoxConstraints, v: GridFunction) -> GridFunction:
    """Pointwise projection ``median(u_a, v, u_b)``."""
    box._check(v)
    return GridFunction(v.grid, box.clip(v.values))


def _activity_masks(box, u, tol):
    lo = np.abs(u - box.lower.values) <= tol
    hi = np.abs(u - box.upper.values) <= tol
    return lo, hi


def normal_cone_violation(box: BoxConstraints, u: np.ndarray, w: np.ndarray, tol: float) -> np.ndarray:
    """Nodal violation of ``w in N_{U_ad}(u)``; raw arrays, no checks."""
    lo, hi = _activity_masks(box, u, tol)
    viol = w.copy()
    viol[lo] = np.maximum(w[lo], 0.0)
    viol[hi] = np.minimum(w[hi], 0.0)
    # degenerate node u_a = u_b: every w is admissible
    viol[lo & hi] = 0.0
    return viol


def normal_cone_residual(box: BoxConstraints, u: GridFunction, w: GridFunction, tol=None) -> float:
    """Weighted L2 norm of the violation of ``w in N_{U_ad}(u)``.

    Required signs: ``w <= 0`` where ``u = u_a``, ``w = 0`` strictly inside,
    ``w >= 0`` where ``u = u_b``; activity is decided within the band ``tol``.
    A return value of 0 means ``w`` lies in the normal cone.
    """
    box._check(u)
    box._check(w)
    tol = box.default_tol() if tol is None else tol
    if not box.contains(u, tol):
        raise InfeasibleError("u lies outside the box beyond tolerance")
    viol = normal_cone_violation(box, u.values, w.values, tol)
    return float(np.sqrt(np.dot(u.grid.weights, viol ** 2)))


def default_theta(op: OperatorHandle) -> float:
    """``1 / ||S||^2_est``, the unit-scale projected-gradient step."""
    nrm = op.norm_estimate
    return 1.0 / nrm ** 2 if nrm > 0 else 1.0


def stationarity_residual(op: OperatorHandle, z: GridFunction, box: BoxConstraints,
                          u: GridFunction, theta=None) -> float:
    """``|| u - P(u - theta S*(S u - z)) ||`` in the weighted norm.

    Zero exactly at solutions of ``min 1/2 ||Su - z||^2`` over the box, for any
    ``theta > 0``; ``theta`` defaults to ``1 / ||S||^2_est``.
    """
    theta = default_theta(op) if theta is None else theta
    if theta <= 0:
        raise ValueError("theta must be positive")
    box._check(u)
    grad = op.rmatvec(op.matvec(u.values) - z.values)
    r = u.values - box.clip(u.values - theta * grad)
    return float(np.sqrt(np.dot(u.grid.weights, r * r)))


def classify_active(box: BoxConstraints, u: GridFunction, tol=None) -> ActiveSetReport:
    """Partition node indices into lower-active, upper-active and inactive.

    A degenerate node with ``u_a = u_b`` is reported as lower-active.
    """
    box._check(u)
    tol = box.default_tol() if tol is None else tol
    lo, hi = _activity_masks(box, u.values, tol)
    hi = hi & ~lo
    idx = np.arange(u.grid.n)
    return ActiveSetReport(idx[lo], idx[hi], idx[~(lo | hi)], tol)


def bregman_distance(box: BoxConstraints, u: GridFunction, v: GridFunction,
                     w: GridFunction, tol=None, check_tol=None) -> float:
    """Bregman distance of ``J = 1/2||.||^2 + I_{U_ad}`` at ``v`` with ``lambda = v + w``.

    Evaluated as ``1/2||u-v||^2 + int_{v=u_a} w (u_a - u) + int_{v=u_b} w (u_b - u)``.
    Returns ``inf`` when ``u`` is infeasible.  Raises :class:`NormalConeError`
    if ``w`` is not (within ``check_tol``) a normal-cone element at ``v``.
    """
    box._check(u)
    tol = box.default_tol() if tol is None else tol
    if not box.contains(v, tol):
        raise InfeasibleError("v must be admissible")
    res = normal_cone_residual(box, v, w, tol)
    if check_tol is None:
        check_tol = 1e-8 * max(1.0, float(np.max(np.abs(w.values))))
    if res > check_tol:
        raise NormalConeError(f"w is not in the normal cone at v (residual {res:.3e})")
    if not box.contains(u, tol):
        return float("inf")
    uu, vv, ww = u.values, v.values, w.values
    h = u.grid.weights
    lo, hi = _activity_masks(box, vv, tol)
    hi = hi & ~lo
    d = uu - vv
    dist = 0.5 * np.dot(h, d * d)
    dist += np.dot(h[lo], ww[lo] * (box.lower.values[lo] - uu[lo]))
    dist += np.dot(h[hi], ww[hi] * (box.upper.values[hi] - uu[hi]))
    return float(dist)
