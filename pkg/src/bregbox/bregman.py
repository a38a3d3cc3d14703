"""Outer Bregman iteration, its subgradient bookkeeping and a proximal-point mode.

The canonical step solves

    min_u 1/2 ||S u - (z + alpha_k mu_{k-1})||^2 + alpha_k/2 ||u||^2   over the box,

then updates ``mu_k = mu_{k-1} + (z - S u_k) / alpha_k`` and
``lambda_k = S* mu_k``.  The equivalent Bregman-distance form
(``form="A2"``) keeps ``lambda`` directly and solves

    min_u 1/2 ||S u - z||^2 + alpha_k (1/2 ||u||^2 - (u, lambda_{k-1})).
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .constraints import (BoxConstraints, bregman_distance, normal_cone_residual, project,
                          stationarity_residual)
from .diagnostics import ReferenceSolution, record_metrics
from .errors import (ConfigError, GridMismatchError, InfeasibleError, NormalConeError,
                     SubproblemNotConverged)
from .operator import GridFunction, OperatorHandle
from .subproblem import DEFAULT_TOL, QuadSubproblem, solve

__all__ = [
    "Schedule",
    "SolverConfig",
    "StopRule",
    "ProblemInstance",
    "BregmanState",
    "init_state",
    "step",
    "run",
    "run_ppm",
    "run_both",
    "bregman_distance",
]


@dataclass(frozen=True)
class Schedule:
    """Regularization parameters ``alpha_k``, ``k >= 1``.

    ``constant``: ``alpha_k = c_alpha``; ``polynomial``: ``c_alpha k^(-s)``;
    ``explicit``: ``values[k-1]``, the last value repeated afterwards.
    With ``s >= 0`` the sequence is bounded by ``c_alpha``.
    """

    kind: str = "constant"
    c_alpha: float = 1.0
    s: float = 0.0
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial", "explicit"):
            raise ConfigError("schedule.kind", f"unknown kind {self.kind!r}")
        if self.kind == "explicit":
            vals = tuple(float(v) for v in self.values)
            if not vals:
                raise ConfigError("schedule.values", "explicit schedule needs at least one value")
            bad = [v for v in vals if not (v > 0 and math.isfinite(v))]
            if bad:
                raise ConfigError("schedule.values", f"entries must be positive and finite, got {bad[0]!r}")
            object.__setattr__(self, "values", vals)
        else:
            if not (self.c_alpha > 0 and math.isfinite(self.c_alpha)):
                raise ConfigError("schedule.c_alpha", f"must be positive, got {self.c_alpha!r}")
            if self.kind == "polynomial" and not (self.s >= 0 and math.isfinite(self.s)):
                raise ConfigError("schedule.s", f"must be >= 0, got {self.s!r}")

    @classmethod
    def constant(cls, alpha=1.0):
        return cls("constant", c_alpha=alpha)

    @classmethod
    def polynomial(cls, c_alpha=1.0, s=0.0):
        return cls("polynomial", c_alpha=c_alpha, s=s)

    @classmethod
    def explicit(cls, values):
        return cls("explicit", values=tuple(values))

    def alpha(self, k: int) -> float:
        if k < 1:
            raise ValueError("alpha_k is defined for k >= 1")
        if self.kind == "constant":
            return float(self.c_alpha)
        if self.kind == "polynomial":
            return float(self.c_alpha * k ** (-self.s))
        return self.values[min(k, len(self.values)) - 1]


@dataclass(frozen=True)
class SolverConfig:
    """Subproblem solver settings; ``form`` selects the A3 or A2 step."""

    method: str = "pdas"
    tol: float = DEFAULT_TOL
    max_iters: int | None = None
    fallback: bool = True
    form: str = "A3"

    def __post_init__(self):
        if self.method not in ("pdas", "pg"):
            raise ConfigError("solver", f"unknown solver {self.method!r}")
        if not self.tol > 0:
            raise ConfigError("tol", "must be positive")
        if self.form not in ("A3", "A2"):
            raise ConfigError("form", f"unknown form {self.form!r}")


@dataclass(frozen=True)
class StopRule:
    """Stop when the stationarity residual is ``<= epsilon`` or ``k = k_max``.

    ``epsilon=None`` means ``1e-8 ||z||``; ``theta=None`` means
    ``1/||S||^2_est``.  Set ``epsilon=0`` to run exactly ``k_max`` steps.
    """

    epsilon: float | None = None
    k_max: int = 10_000
    theta: float | None = None

    def __post_init__(self):
        if self.k_max < 0:
            raise ConfigError("k_max", "must be >= 0")
        if self.epsilon is not None and self.epsilon < 0:
            raise ConfigError("epsilon", "must be >= 0")
        if self.theta is not None and not self.theta > 0:
            raise ConfigError("theta", "must be positive")


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """``min 1/2 ||S u - z||_Y^2`` over ``box``, with an optional known solution."""

    op: OperatorHandle
    z: GridFunction
    box: BoxConstraints
    reference: ReferenceSolution | None = None
    name: str = ""

    def __post_init__(self):
        if not self.op.range_grid.matches(self.z.grid):
            raise GridMismatchError("z must live on the range grid")
        if not self.op.domain_grid.matches(self.box.grid):
            raise GridMismatchError("box must live on the domain grid")


@dataclass
class BregmanState:
    """Iteration state after ``k`` steps.

    ``mu`` is ``None`` in proximal-point mode, where ``lam`` is simply ``u``,
    and after seeding with an explicit ``lam0``.
    ``v`` is the running sum ``sum_i (1/alpha_i) S(u_dagger - u_i)`` and is
    kept only when a reference solution is available.
    """

    k: int
    u: GridFunction
    mu: GridFunction | None
    lam: GridFunction
    gamma: float
    alpha: float | None = None
    v: GridFunction | None = None
    mode: str = "bregman"
    subproblem_iters: int = 0
    wall_ms: float = 0.0
    history: list = field(default_factory=list)
    stop_reason: str | None = None


def init_state(p: ProblemInstance, mode="bregman", u0: GridFunction | None = None,
               mu0: GridFunction | None = None, lam0: GridFunction | None = None) -> BregmanState:
    """Starting state ``u_0 = P(0)``, ``mu_0 = 0``, ``lambda_0 = 0``.

    ``u0`` replaces the starting iterate (projected onto the box).  In
    Bregman mode it only serves as warm start and for the ``k = 0`` metrics,
    since the first step depends on ``mu_0`` alone.

    Two ways to start from a nonzero subgradient:

    * ``mu0`` seeds the dual accumulator; then ``lambda_0 = S* mu0`` and
      ``u_0 = P(lambda_0)``, so ``lambda_0`` is a subgradient at ``u_0``.
    * ``lam0`` together with ``u0`` gives ``lambda_0`` directly; it must
      satisfy ``lam0 - u0 in N(u0)``.  No ``mu`` is available then, so only
      the ``A2`` form can step from such a state.
    """
    if mode not in ("bregman", "ppm"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "ppm" and (mu0 is not None or lam0 is not None):
        raise ValueError("proximal-point mode has no subgradient to seed")
    if mu0 is not None and lam0 is not None:
        raise ValueError("give either mu0 or lam0, not both")
    dom = p.op.domain_grid
    if mu0 is not None:
        lam = GridFunction(dom, p.op.rmatvec(mu0.values))
        u = project(p.box, lam)
        mu = mu0
    elif lam0 is not None:
        if u0 is None:
            raise ValueError("lam0 needs the matching u0")
        if not p.box.contains(u0):
            raise InfeasibleError("u0 violates the box")
        u = GridFunction(dom, p.box.clip(u0.values))
        res = normal_cone_residual(p.box, u, lam0 - u)
        if res > 1e-8 * max(1.0, lam0.norm()):
            raise NormalConeError(f"lam0 is not a subgradient at u0 (residual {res:.3e})")
        mu, lam = None, lam0
    else:
        u = project(p.box, GridFunction.zeros(dom) if u0 is None else u0)
        mu = GridFunction.zeros(p.op.range_grid) if mode == "bregman" else None
        lam = GridFunction.zeros(dom) if mode == "bregman" else u
    v = GridFunction.zeros(p.op.range_grid) if p.reference is not None else None
    state = BregmanState(0, u, mu, lam, 0.0, v=v, mode=mode)
    state.history.append(record_metrics(state, p))
    return state


def _subproblem(state: BregmanState, p: ProblemInstance, alpha: float, form: str) -> QuadSubproblem:
    if state.mode == "ppm":
        # 1/2||Su - z||^2 + alpha ||u - u_k||^2
        return QuadSubproblem(p.op, p.z, 2.0 * alpha, p.box, shift=state.u)
    if form == "A3":
        if state.mu is None:
            raise ValueError("the A3 form needs mu; this state was seeded with lam0, use form='A2'")
        return QuadSubproblem(p.op, p.z + state.mu * alpha, alpha, p.box)
    return QuadSubproblem(p.op, p.z, alpha, p.box, shift=state.lam)


def step(state: BregmanState, p: ProblemInstance, sched: Schedule,
         solver_cfg: SolverConfig = SolverConfig()) -> BregmanState:
    """One outer iteration; returns a new state sharing the history list."""
    k = state.k + 1
    alpha = sched.alpha(k)
    t0 = time.perf_counter()
    sub = _subproblem(state, p, alpha, solver_cfg.form)
    try:
        sol = solve(sub, solver_cfg.method, solver_cfg.tol, solver_cfg.max_iters,
                    u0=state.u, fallback=solver_cfg.fallback)
    except SubproblemNotConverged as exc:
        raise SubproblemNotConverged(f"outer iteration {k}: {exc}", best=exc.best,
                                     residual=exc.residual, iteration=k) from exc
    u = sol.u
    su = p.op.matvec(u.values)
    resid = GridFunction(p.op.range_grid, p.z.values - su)
    if state.mode == "ppm":
        mu, lam = None, u
    else:
        mu = None if state.mu is None else state.mu + resid / alpha
        if solver_cfg.form == "A3":
            lam = GridFunction(u.grid, p.op.rmatvec(mu.values))
        else:
            lam = state.lam + GridFunction(u.grid, p.op.rmatvec(resid.values)) / alpha
    v = None
    if state.v is not None:
        ref = p.reference
        v = state.v + GridFunction(p.op.range_grid, ref.y_dagger.values - su) / alpha
    wall = (time.perf_counter() - t0) * 1e3
    new = replace(state, k=k, u=u, mu=mu, lam=lam, gamma=state.gamma + 1.0 / alpha,
                  alpha=alpha, v=v, subproblem_iters=sol.iterations, wall_ms=wall,
                  stop_reason=None)
    new.history.append(record_metrics(new, p))
    return new


def run(p: ProblemInstance, sched: Schedule, stop: StopRule = StopRule(),
        solver_cfg: SolverConfig = SolverConfig(), state: BregmanState | None = None,
        mode="bregman"):
    """Iterate until the stationarity residual is ``<= epsilon`` or ``k_max``.

    Returns
    -------
    state, history
        ``history`` holds one :class:`MetricRow` per iteration ``k >= 1``;
        the reason for stopping is stored on ``state.stop_reason``.
    """
    if state is None:
        state = init_state(p, mode=mode)
    eps = 1e-8 * p.z.norm() if stop.epsilon is None else stop.epsilon
    reason = "k_max"
    while True:
        if eps > 0 and stationarity_residual(p.op, p.z, p.box, state.u, stop.theta) <= eps:
            reason = "epsilon"
            break
        if state.k >= stop.k_max:
            break
        state = step(state, p, sched, solver_cfg)
    state.stop_reason = reason
    history = [row for row in state.history if row.k >= 1]
    return state, history


def run_ppm(p: ProblemInstance, sched: Schedule, stop: StopRule = StopRule(),
            solver_cfg: SolverConfig = SolverConfig(), u0: GridFunction | None = None):
    """Proximal-point iteration ``min 1/2||Su - z||^2 + alpha_k ||u - u_{k-1}||^2``."""
    return run(p, sched, stop, solver_cfg, state=init_state(p, mode="ppm", u0=u0))


def run_both(p: ProblemInstance, sched: Schedule, stop: StopRule = StopRule(),
             solver_cfg: SolverConfig = SolverConfig()):
    """Bregman and proximal-point runs on the same instance.

    Returns a dict ``{"bregman": (state, history), "ppm": (state, history)}``.
    """
    return {"bregman": run(p, sched, stop, solver_cfg),
            "ppm": run_ppm(p, sched, stop, solver_cfg)}


def aligned(histories: dict, metric: str):
    """Rows ``(k, value_mode1, value_mode2, ...)`` over the common ``k`` range."""
    names = list(histories)
    by_k = [{row.k: getattr(row, metric) for row in histories[n]} for n in names]
    ks = sorted(set.intersection(*(set(d) for d in by_k)))
    return [(k, *(d[k] for d in by_k)) for k in ks]


def subgradient_gap(state: BregmanState, p: ProblemInstance) -> float:
    """``||lambda_k - S* mu_k||`` (zero up to round-off in Bregman mode)."""
    if state.mu is None:
        return 0.0
    d = state.lam.values - p.op.rmatvec(state.mu.values)
    return float(np.sqrt(np.dot(state.lam.grid.weights, d * d)))
