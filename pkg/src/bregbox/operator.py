"""Discretized linear operators between weighted grid spaces.

A :class:`Grid` carries nodes and positive quadrature weights ``h_i``; the
discrete L2 inner product on it is ``<u, v> = sum_i h_i u_i v_i``.  Every
operator stores its matrix ``M`` (acting on nodal values) together with the
adjoint with respect to the *weighted* inner products,

    S* = W_U^{-1} M^T W_Y,

so that ``<S u, y>_Y = <u, S* y>_U`` holds to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .errors import GridMismatchError

__all__ = [
    "Grid",
    "GridFunction",
    "OperatorHandle",
    "apply",
    "apply_adjoint",
    "operator_norm_estimate",
    "adjoint_consistency_check",
    "dense_operator",
    "fredholm_operator",
    "gaussian_kernel",
    "poisson1d_operator",
    "load_dense_matrix",
    "make_operator",
]


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered 1-D nodes with positive quadrature weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes).ravel()
        weights = _frozen(self.weights).ravel()
        if nodes.shape != weights.shape:
            raise ValueError("weight count must equal node count")
        if nodes.size == 0:
            raise ValueError("grid needs at least one node")
        if not np.all(weights > 0):
            raise ValueError("quadrature weights must be strictly positive")
        if nodes.size > 1 and not np.all(np.diff(nodes) > 0):
            raise ValueError("nodes must be strictly increasing")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, n, a=0.0, b=1.0):
        """Uniform grid on [a, b] with trapezoidal weights (h/2 at the ends)."""
        if n < 2:
            raise ValueError("uniform grid needs n >= 2")
        nodes = np.linspace(a, b, n)
        h = (b - a) / (n - 1)
        w = np.full(n, h)
        w[0] = w[-1] = h / 2
        return cls(nodes, w)

    @classmethod
    def from_nodes(cls, nodes):
        """Non-uniform grid; each node gets the length of its dual cell."""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.size < 2:
            raise ValueError("need at least two nodes")
        mid = 0.5 * (nodes[1:] + nodes[:-1])
        edges = np.concatenate([[nodes[0]], mid, [nodes[-1]]])
        return cls(nodes, np.diff(edges))

    @classmethod
    def unit(cls, n):
        """Nodes 0..n-1 with unit weights (plain Euclidean inner product)."""
        return cls(np.arange(n, dtype=float), np.ones(n))

    @property
    def n(self):
        return self.nodes.size

    @property
    def measure(self):
        return float(self.weights.sum())

    def matches(self, other):
        if self is other:
            return True
        return (
            isinstance(other, Grid)
            and other.n == self.n
            and np.array_equal(other.nodes, self.nodes)
            and np.array_equal(other.weights, self.weights)
        )


class GridFunction:
    """Nodal values on a :class:`Grid`; immutable.

    Supports ``+``, ``-``, scalar ``*``/``/`` with grid checking, and the
    weighted inner product / norms of the underlying grid.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.array(values, dtype=float)
        if values.ndim == 0:
            values = np.full(grid.n, float(values))
        if values.shape != (grid.n,):
            raise GridMismatchError(
                f"expected {grid.n} values, got shape {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __setattr__(self, name, value):
        raise AttributeError("GridFunction is immutable")

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def from_callable(cls, grid, f: Callable):
        return cls(grid, f(grid.nodes))

    def _check(self, other):
        if not self.grid.matches(other.grid):
            raise GridMismatchError("grid functions live on different grids")

    def inner(self, other: "GridFunction") -> float:
        self._check(other)
        return float(np.dot(self.grid.weights * self.values, other.values))

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.grid.weights, self.values ** 2)))

    def l1(self, indices=None) -> float:
        """``sum_{i in indices} h_i |u_i|`` (all nodes when indices is None)."""
        if indices is None:
            return float(np.dot(self.grid.weights, np.abs(self.values)))
        idx = np.asarray(indices, dtype=int)
        return float(np.dot(self.grid.weights[idx], np.abs(self.values[idx])))

    def with_values(self, values):
        return GridFunction(self.grid, values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def __len__(self):
        return self.grid.n

    def __add__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values + other.values)
        return GridFunction(self.grid, self.values + float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, GridFunction):
            self._check(other)
            return GridFunction(self.grid, self.values - other.values)
        return GridFunction(self.grid, self.values - float(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, float(other) - self.values)

    def __mul__(self, c):
        if isinstance(c, GridFunction):
            return NotImplemented
        return GridFunction(self.grid, self.values * float(c))

    __rmul__ = __mul__

    def __truediv__(self, c):
        return GridFunction(self.grid, self.values / float(c))

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def __repr__(self):
        return f"GridFunction(n={self.grid.n}, values={self.values!r})"


@dataclass(frozen=True, eq=False)
class OperatorHandle:
    """Linear map ``S: U -> Y`` with its weighted adjoint.

    ``matrix`` acts on nodal values of the domain grid.  ``adjoint_matrix`` is
    derived from the weights unless given explicitly (only test fixtures do
    that, to inject a broken adjoint).
    """

    domain_grid: Grid
    range_grid: Grid
    kind: str
    matrix: np.ndarray
    params: dict = field(default_factory=dict)
    adjoint_matrix: np.ndarray | None = None

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.shape != (self.range_grid.n, self.domain_grid.n):
            raise ValueError(
                f"matrix shape {m.shape} does not match grids "
                f"({self.range_grid.n}, {self.domain_grid.n})")
        object.__setattr__(self, "matrix", m)
        if self.adjoint_matrix is None:
            adj = (m.T * self.range_grid.weights[None, :]) / self.domain_grid.weights[:, None]
        else:
            adj = self.adjoint_matrix
        adj = _frozen(adj)
        if adj.shape != m.T.shape:
            raise ValueError("adjoint matrix has the wrong shape")
        object.__setattr__(self, "adjoint_matrix", adj)

    # raw-array kernels used by the solvers
    def matvec(self, u: np.ndarray) -> np.ndarray:
        return self.matrix @ u

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return self.adjoint_matrix @ y

    @cached_property
    def gram(self) -> np.ndarray:
        """Symmetric matrix ``M^T W_Y M``; ``W_U^{-1} gram`` represents S*S."""
        g = self.matrix.T @ (self.range_grid.weights[:, None] * self.matrix)
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        return g

    @cached_property
    def norm_estimate(self) -> float:
        return operator_norm_estimate(self, iters=200)

    def __call__(self, u: GridFunction) -> GridFunction:
        return apply(self, u)


def apply(op: OperatorHandle, u: GridFunction) -> GridFunction:
    """Return ``S u`` on the range grid."""
    if not op.domain_grid.matches(u.grid):
        raise GridMismatchError("u does not live on the operator's domain grid")
    return GridFunction(op.range_grid, op.matvec(u.values))


def apply_adjoint(op: OperatorHandle, y: GridFunction) -> GridFunction:
    """Return ``S* y`` on the domain grid (adjoint in the weighted products)."""
    if not op.range_grid.matches(y.grid):
        raise GridMismatchError("y does not live on the operator's range grid")
    return GridFunction(op.domain_grid, op.rmatvec(y.values))


def operator_norm_estimate(op: OperatorHandle, iters: int = 100) -> float:
    """Power-iteration estimate of ``||S|| = sup ||Su||_Y / ||u||_U``.

    Iterates ``u <- S*S u`` from a fixed pseudo-random positive start.  For
    the positive semidefinite ``S*S`` the Rayleigh quotients of the power
    sequence are nondecreasing, hence so is the estimate.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    wu = op.domain_grid.weights
    wy = op.range_grid.weights
    u = np.random.default_rng(12345).uniform(0.5, 1.5, op.domain_grid.n)
    est = 0.0
    for _ in range(iters):
        nu = np.sqrt(np.dot(wu, u * u))
        if nu == 0.0:
            return 0.0
        u = u / nu
        su = op.matvec(u)
        est = max(est, float(np.sqrt(np.dot(wy, su * su))))
        u = op.rmatvec(su)
    return est


def adjoint_consistency_check(op: OperatorHandle, trials: int = 100, seed=0) -> float:
    """Max of ``|<Su,y>_Y - <u,S*y>_U| / (||u|| ||y||)`` over random pairs."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    wu = op.domain_grid.weights
    wy = op.range_grid.weights
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.domain_grid.n)
        y = rng.standard_normal(op.range_grid.n)
        lhs = np.dot(wy * op.matvec(u), y)
        rhs = np.dot(wu * u, op.rmatvec(y))
        scale = np.sqrt(np.dot(wu, u * u) * np.dot(wy, y * y))
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


# -- constructors -----------------------------------------------------------

def dense_operator(matrix, domain_grid: Grid | None = None,
                   range_grid: Grid | None = None, adjoint_matrix=None) -> OperatorHandle:
    """Operator given by an explicit matrix; unit-weight grids by default."""
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    domain_grid = domain_grid or Grid.unit(m.shape[1])
    range_grid = range_grid or Grid.unit(m.shape[0])
    return OperatorHandle(domain_grid, range_grid, "dense", m,
                          params={"shape": m.shape}, adjoint_matrix=adjoint_matrix)


def gaussian_kernel(width=0.05):
    """Normalized Gaussian ``k(x,t) = exp(-(x-t)^2 / (2 w^2)) / (w sqrt(2 pi))``."""
    c = 1.0 / (width * np.sqrt(2 * np.pi))

    def k(x, t):
        return c * np.exp(-((x - t) ** 2) / (2 * width ** 2))

    k.width = width
    return k


def fredholm_operator(grid: Grid, kernel: Callable, range_grid: Grid | None = None) -> OperatorHandle:
    """``(Su)(x_i) = sum_j h_j k(x_i, t_j) u_j``, the quadrature of ``int k u dt``."""
    range_grid = range_grid or grid
    samples = kernel(range_grid.nodes[:, None], grid.nodes[None, :])
    samples = np.broadcast_to(np.asarray(samples, dtype=float),
                              (range_grid.n, grid.n))
    m = samples * grid.weights[None, :]
    params = {"kernel_width": getattr(kernel, "width", None)}
    return OperatorHandle(grid, range_grid, "fredholm", m, params=params)


def poisson1d_operator(grid: Grid) -> OperatorHandle:
    """Solution operator of ``-y'' = u`` on the grid with ``y = 0`` at both ends.

    Uses the 3-point Laplacian on the interior nodes; the boundary rows are
    eliminated, so boundary values of ``u`` do not influence ``S u``.
    Requires a uniform grid.
    """
    n = grid.n
    if n < 3:
        raise ValueError("poisson1d needs at least 3 nodes")
    h = np.diff(grid.nodes)
    if not np.allclose(h, h[0], rtol=1e-12, atol=0):
        raise ValueError("poisson1d requires a uniform grid")
    h = float(h[0])
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = -1.0 / h ** 2
    ab[1, :] = 2.0 / h ** 2
    ab[2, :-1] = -1.0 / h ** 2
    inv = solve_banded((1, 1), ab, np.eye(m))
    inv = 0.5 * (inv + inv.T)
    full = np.zeros((n, n))
    full[1:-1, 1:-1] = inv
    return OperatorHandle(grid, grid, "poisson1d", full, params={"n": n})


def load_dense_matrix(path) -> np.ndarray:
    """Read ``rows cols`` on the first line, then row-major entries."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: first line must be 'rows cols'")
        rows, cols = int(header[0]), int(header[1])
        data = np.array(fh.read().split(), dtype=float)
    if data.size != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} entries, found {data.size}")
    return data.reshape(rows, cols)


def make_operator(kind: str, grid: Grid, *, kernel_width=0.05, matrix=None,
                  seed=0) -> OperatorHandle:
    """Build an operator of a named kind on ``grid`` (domain = range grid).

    ``dense`` without an explicit matrix draws a seeded standard normal
    matrix scaled by ``1/sqrt(n)``.
    """
    if kind == "poisson1d":
        return poisson1d_operator(grid)
    if kind == "fredholm":
        return fredholm_operator(grid, gaussian_kernel(kernel_width))
    if kind == "dense":
        if matrix is None:
            rng = np.random.default_rng(seed)
            matrix = rng.standard_normal((grid.n, grid.n)) / np.sqrt(grid.n)
        return dense_operator(matrix, grid, grid)
    raise ValueError(f"unknown operator kind {kind!r}")
