"""Iterative Bregman regularization for box-constrained linear-quadratic problems."""
from .bregman import (BregmanState, ProblemInstance, Schedule, SolverConfig, StopRule,
                      init_state, run, run_both, run_ppm, step)
from .constraints import BoxConstraints, bregman_distance, project, stationarity_residual
from .diagnostics import ReferenceSolution, fit_rate, record_metrics
from .operator import Grid, GridFunction, OperatorHandle, apply, apply_adjoint, make_operator
from .problems import BenchmarkSpec, build, standard

__version__ = "0.1.0"

__all__ = [
    "BenchmarkSpec", "BoxConstraints", "BregmanState", "Grid", "GridFunction",
    "OperatorHandle", "ProblemInstance", "ReferenceSolution", "Schedule", "SolverConfig",
    "StopRule", "apply", "apply_adjoint", "bregman_distance", "build", "fit_rate",
    "init_state", "make_operator", "project", "record_metrics", "run", "run_both",
    "run_ppm", "stationarity_residual", "standard", "step",
]
