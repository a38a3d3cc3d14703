"""Per-iteration box-constrained quadratic programs.

Each outer step needs the exact minimizer of

    F(u) = 1/2 ||S u - b||_Y^2 + (alpha/2) ||u||^2 - alpha <shift, u>

over the box.  ``shift = 0`` is the shifted-target form used by the main
loop; a nonzero ``shift`` (a subgradient) gives the Bregman-distance form.
Two independent solvers are provided (accelerated projected gradient and a
primal-dual active set method) plus an exhaustive oracle for tiny instances.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .constraints import BoxConstraints, normal_cone_residual
from .errors import GridMismatchError, SubproblemNotConverged
from .operator import GridFunction, OperatorHandle

__all__ = [
    "QuadSubproblem",
    "SubproblemSolution",
    "objective",
    "solve_projected_gradient",
    "solve_pdas",
    "brute_force_oracle",
    "kkt_residual",
    "solve",
    "pg_error_bound",
    "pg_tolerance",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class QuadSubproblem:
    op: OperatorHandle
    target: GridFunction
    alpha: float
    box: BoxConstraints
    shift: GridFunction | None = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.op.range_grid.matches(self.target.grid):
            raise GridMismatchError("target must live on the range grid")
        if not self.op.domain_grid.matches(self.box.grid):
            raise GridMismatchError("box must live on the domain grid")
        if self.shift is not None and not self.op.domain_grid.matches(self.shift.grid):
            raise GridMismatchError("shift must live on the domain grid")

    @property
    def n(self):
        return self.op.domain_grid.n

    def _shift(self):
        return np.zeros(self.n) if self.shift is None else self.shift.values

    def hessian(self):
        """SPD matrix ``M^T W_Y M + alpha W_U`` (the weighted Hessian)."""
        g = np.array(self.op.gram)
        g[np.diag_indices_from(g)] += self.alpha * self.op.domain_grid.weights
        return g

    def linear_term(self):
        """``c`` with ``F(u) = 1/2 u^T H u - c^T u + const``."""
        wy = self.op.range_grid.weights
        wu = self.op.domain_grid.weights
        return self.op.matrix.T @ (wy * self.target.values) + self.alpha * wu * self._shift()

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Riesz representative ``S*(Su - b) + alpha (u - shift)``."""
        return self.op.rmatvec(self.op.matvec(u) - self.target.values) + self.alpha * (u - self._shift())

    def step_size(self):
        return 1.0 / (self.op.norm_estimate ** 2 + self.alpha)

    def normal_element(self, u: np.ndarray) -> np.ndarray:
        """``w = shift - u - (1/alpha) S*(Su - b)``; lies in N(u) at the solution."""
        return -self.gradient(u) / self.alpha


@dataclass
class SubproblemSolution:
    u: GridFunction
    w: GridFunction
    kkt_residual: float
    iterations: int
    solver: str
    residual: float = 0.0
    active_sets: tuple | None = field(default=None, repr=False)


def objective(sub: QuadSubproblem, u: GridFunction) -> float:
    r = sub.op.matvec(u.values) - sub.target.values
    wy = sub.op.range_grid.weights
    wu = sub.op.domain_grid.weights
    uu = u.values
    return float(0.5 * np.dot(wy, r * r) + 0.5 * sub.alpha * np.dot(wu, uu * uu)
                 - sub.alpha * np.dot(wu * sub._shift(), uu))


def _wnorm(w, x):
    return float(np.sqrt(np.dot(w, x * x)))


def _fixed_point_residual(sub, u, g=None):
    g = sub.gradient(u) if g is None else g
    r = u - sub.box.clip(u - sub.step_size() * g)
    return _wnorm(sub.op.domain_grid.weights, r)


def _finish(sub, u, iterations, solver, residual, active_sets=None):
    grid = sub.op.domain_grid
    ug = GridFunction(grid, u)
    wg = GridFunction(grid, sub.normal_element(u))
    kkt = normal_cone_residual(sub.box, ug, wg)
    return SubproblemSolution(ug, wg, kkt, iterations, solver, residual, active_sets)


def pg_error_bound(sub: QuadSubproblem, residual: float) -> float:
    """Bound on ``||u - u*||`` from the fixed-point residual of the PG map.

    With step ``t = 1/L``, ``L = ||S||^2 + alpha`` and strong convexity
    modulus ``alpha``: ``||u - u*|| <= (1 + 2 L / alpha) * residual``.
    """
    L = sub.op.norm_estimate ** 2 + sub.alpha
    return (1.0 + 2.0 * L / sub.alpha) * residual


def pg_tolerance(sub: QuadSubproblem, accuracy: float) -> float:
    """Fixed-point tolerance that certifies ``||u - u*|| <= accuracy``."""
    return accuracy / pg_error_bound(sub, 1.0)


def solve_projected_gradient(sub: QuadSubproblem, tol=DEFAULT_TOL, max_iters=100_000,
                             u0: GridFunction | None = None) -> SubproblemSolution:
    """Accelerated projected gradient with function-value restart.

    Step ``1/(||S||^2_est + alpha)``.  Stops when the fixed-point residual
    ``||u - P(u - step * grad F(u))||`` drops to ``tol``.

    Raises
    ------
    SubproblemNotConverged
        After ``max_iters`` iterations; carries the best iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    op, box = sub.op, sub.box
    wu = op.domain_grid.weights
    wy = op.range_grid.weights
    b = sub.target.values
    shift = sub._shift()
    alpha = sub.alpha
    t = sub.step_size()

    def evaluate(x):
        sx = op.matvec(x)
        r = sx - b
        g = op.rmatvec(r) + alpha * (x - shift)
        f = 0.5 * np.dot(wy, r * r) + 0.5 * alpha * np.dot(wu, x * x) - alpha * np.dot(wu * shift, x)
        return g, f

    x = box.clip(np.zeros(sub.n) if u0 is None else u0.values)
    gx, fx = evaluate(x)
    x_prev, gx_prev = x, gx
    theta = 1.0
    best, best_res = x, np.inf
    for it in range(1, max_iters + 1):
        res = _wnorm(wu, x - box.clip(x - t * gx))
        if res < best_res:
            best, best_res = x, res
        if res <= tol:
            return _finish(sub, x, it - 1, "pg", res)
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        beta = (theta - 1.0) / theta_new
        y = x + beta * (x - x_prev)
        gy = gx + beta * (gx - gx_prev)  # gradient is affine
        x_new = box.clip(y - t * gy)
        g_new, f_new = evaluate(x_new)
        if f_new > fx:
            theta_new = 1.0
            x_new = box.clip(x - t * gx)
            g_new, f_new = evaluate(x_new)
        x_prev, gx_prev = x, gx
        x, gx, fx = x_new, g_new, f_new
        theta = theta_new
    raise SubproblemNotConverged(
        f"projected gradient did not reach tol={tol:g} in {max_iters} iterations "
        f"(best residual {best_res:.3e})",
        best=GridFunction(op.domain_grid, best), residual=best_res, iteration=max_iters)


def solve_pdas(sub: QuadSubproblem, tol=DEFAULT_TOL, max_iters=100,
               u0: GridFunction | None = None) -> SubproblemSolution:
    """Primal-dual active set method.

    The first guess comes from the warm start: with multiplier
    ``sigma = -grad F(u0)`` nodes with ``sigma + alpha (u0 - u_b) > 0`` start
    upper-active and nodes with ``sigma + alpha (u0 - u_a) < 0`` lower-active.
    Each update fixes ``u`` to the bound on the active sets, solves the
    reduced Hessian system on the free nodes and then moves every node whose
    primal bound or multiplier sign is violated (free -> violated bound,
    active with wrong-signed multiplier -> free).  If the number of
    violations stops decreasing for three updates only the highest-index
    violation is moved; for a positive definite Hessian this single-pivot
    rule cannot cycle.

    Raises
    ------
    SubproblemNotConverged
        On a repeated active-set guess or after ``max_iters`` updates.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    box = sub.box
    wu = sub.op.domain_grid.weights
    a, b = box.lower.values, box.upper.values
    hess = sub.hessian()
    c = sub.linear_term()
    alpha = sub.alpha
    band = box.default_tol()

    u = box.clip(np.zeros(sub.n) if u0 is None else u0.values)
    sigma = -(hess @ u - c) / wu
    upper = sigma + alpha * (u - b) > 0
    lower = (sigma + alpha * (u - a) < 0) & ~upper
    seen = set()
    fewest, stalled = np.inf, 0
    for it in range(1, max_iters + 1):
        key = (upper.tobytes(), lower.tobytes())
        if key in seen:
            raise SubproblemNotConverged(
                f"active-set cycle detected after {it} updates",
                best=GridFunction(sub.op.domain_grid, box.clip(u)), iteration=it)
        seen.add(key)
        free = ~(lower | upper)
        u = np.where(upper, b, np.where(lower, a, 0.0))
        if free.any():
            fixed = ~free
            rhs = c[free] - hess[np.ix_(free, fixed)] @ u[fixed]
            h_ff = hess[np.ix_(free, free)]
            try:
                u[free] = cho_solve(cho_factor(h_ff), rhs)
            except LinAlgError:
                u[free] = np.linalg.solve(h_ff, rhs)
        g = (hess @ u - c) / wu
        sigma = np.where(free, 0.0, -g)
        to_upper = free & (u > b + band)
        to_lower = free & (u < a - band)
        to_free = (lower & (sigma > 0)) | (upper & (sigma < 0))
        bad = to_upper | to_lower | to_free
        nbad = int(bad.sum())
        if nbad == 0:
            u = box.clip(u)
            res = _fixed_point_residual(sub, u, g)
            if res > tol:
                raise SubproblemNotConverged(
                    f"active sets settled but residual {res:.3e} > tol={tol:g}",
                    best=GridFunction(sub.op.domain_grid, u), residual=res, iteration=it)
            idx = np.arange(sub.n)
            return _finish(sub, u, it, "pdas", res, (idx[lower], idx[upper]))
        if nbad < fewest:
            fewest, stalled = nbad, 0
        else:
            stalled += 1
        if stalled >= 3:
            keep = np.flatnonzero(bad)[-1]
            mask = np.zeros(sub.n, dtype=bool)
            mask[keep] = True
            to_upper &= mask
            to_lower &= mask
            to_free &= mask
        upper = (upper & ~to_free) | to_upper
        lower = (lower & ~to_free) | to_lower
    raise SubproblemNotConverged(
        f"PDAS did not settle in {max_iters} set updates",
        best=GridFunction(sub.op.domain_grid, box.clip(u)), iteration=max_iters)


def brute_force_oracle(sub: QuadSubproblem) -> GridFunction:
    """Exhaustive KKT search over all ``3^n`` activity patterns (n <= 10).

    For each lower/free/upper assignment the reduced equality-constrained
    quadratic is solved and the primal feasibility / multiplier-sign
    violation recorded; the pattern with the smallest violation is the KKT
    point, which is unique because ``F`` is strictly convex.
    """
    n = sub.n
    if n > 10:
        raise ValueError("brute force oracle is limited to n <= 10")
    wu = sub.op.domain_grid.weights
    a, b = sub.box.lower.values, sub.box.upper.values
    hess = sub.hessian()
    c = sub.linear_term()
    scale = 1.0 + np.max(np.abs(c) / wu) + np.max(np.abs(a)) + np.max(np.abs(b))
    best_u, best_viol = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pat = np.array(pattern)
        free = pat == 1
        u = np.where(pat == 2, b, a).astype(float)
        if free.any():
            fixed = ~free
            rhs = c[free] - hess[np.ix_(free, fixed)] @ u[fixed]
            u[free] = np.linalg.solve(hess[np.ix_(free, free)], rhs)
        sigma = -(hess @ u - c) / wu
        viol = max(
            np.max(np.maximum(a - u, 0.0)),
            np.max(np.maximum(u - b, 0.0)),
            np.max(np.maximum(sigma[pat == 0], 0.0), initial=0.0),
            np.max(np.maximum(-sigma[pat == 2], 0.0), initial=0.0),
        )
        if viol < best_viol:
            best_u, best_viol = u, viol
    if best_u is None or best_viol > 1e-8 * scale:
        raise RuntimeError(f"no admissible activity pattern (best violation {best_viol:.3e})")
    return GridFunction(sub.op.domain_grid, sub.box.clip(best_u))


def kkt_residual(sub: QuadSubproblem, u: GridFunction, lambda_prev: GridFunction | None = None) -> float:
    """Normal-cone residual of ``w := lambda_prev - u - (1/alpha) S*(Su - b)``.

    With ``b = z`` and ``lambda_prev`` the previous subgradient this certifies
    the Bregman-distance form of the step; ``lambda_prev`` defaults to
    ``sub.shift`` (zero for the shifted-target form).
    """
    lam = sub._shift() if lambda_prev is None else lambda_prev.values
    grid = sub.op.domain_grid
    r = sub.op.rmatvec(sub.op.matvec(u.values) - sub.target.values)
    w = lam - u.values - r / sub.alpha
    return normal_cone_residual(sub.box, u, GridFunction(grid, w))


def solve(sub: QuadSubproblem, method="pdas", tol=DEFAULT_TOL, max_iters=None,
          u0: GridFunction | None = None, fallback=True) -> SubproblemSolution:
    """Dispatch to a solver; optionally retry PDAS failures with projected gradient."""
    if method == "pg":
        return solve_projected_gradient(sub, tol, max_iters or 100_000, u0)
    if method != "pdas":
        raise ValueError(f"unknown subproblem solver {method!r}")
    try:
        return solve_pdas(sub, tol, max_iters or 100, u0)
    except SubproblemNotConverged as exc:
        if not fallback:
            raise
        start = exc.best if exc.best is not None else u0
        return solve_projected_gradient(sub, tol, 100_000, start)
