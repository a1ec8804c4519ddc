"""Chebyshev-Gauss-Lobatto collocation on [-1, 1].

Nodes, dense differentiation matrices, Clenshaw-Curtis quadrature, and the
Dirichlet Helmholtz inverse that the wall-bounded solvers are built on.
Boundary conditions are imposed by row replacement throughout.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import IncompatibleGridError, InvalidResolutionError, LinearSolveError

__all__ = [
    "ChebyshevGrid",
    "GridFunction",
    "build_grid",
    "differentiate",
    "quad_integrate",
    "helmholtz_inverse",
    "interpolate",
]


def _cheb_nodes_matrix(n):
    # Trefethen's cheb.m with the negative-sum trick; nodes symmetrized so
    # that endpoints are exactly +-1 and (for odd n) the midpoint exactly 0.
    N = n - 1
    j = np.arange(n)
    x = np.cos(np.pi * j / N)
    x = (x - x[::-1]) / 2.0
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** j
    dX = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dX + np.eye(n))
    D -= np.diag(D.sum(axis=1))
    return x, D


def _clencurt_weights(n):
    N = n - 1
    theta = np.pi * np.arange(n) / N
    w = np.zeros(n)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[-1] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[ii]) / (N**2 - 1)
    else:
        w[0] = w[-1] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
    w[ii] = 2.0 * v / N
    return w


@dataclass(frozen=True)
class ChebyshevGrid:
    """Immutable collocation grid; safe to share across threads."""

    n: int
    nodes: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    weights: np.ndarray
    # per-|k|^2 caches for the Dirichlet Helmholtz operator
    _helm_lu: dict = field(default_factory=dict, repr=False, compare=False)
    _helm_inv: dict = field(default_factory=dict, repr=False, compare=False)

    def function(self, values):
        values = np.asarray(values, dtype=complex)
        if values.shape != (self.n,):
            raise IncompatibleGridError(
                f"expected {self.n} samples, got shape {values.shape}"
            )
        return GridFunction(self, values)

    def from_callable(self, f):
        return self.function(np.asarray(f(self.nodes), dtype=complex))

    def helmholtz_lu(self, k2):
        """LU factorization of (d2 - k2*I) with Dirichlet rows at both walls."""
        key = float(k2)
        if key not in self._helm_lu:
            A = self.d2 - k2 * np.eye(self.n)
            A[0] = 0.0
            A[0, 0] = 1.0
            A[-1] = 0.0
            A[-1, -1] = 1.0
            self._helm_lu[key] = lu_factor(A)
        return self._helm_lu[key]

    def helmholtz_inverse_matrix(self, k2):
        """Dense inverse of the Dirichlet Helmholtz operator.

        Columns corresponding to the wall rows are zeroed so the matrix acts
        on a right-hand side as 'replace wall entries by 0, then solve'.
        """
        key = float(k2)
        if key not in self._helm_inv:
            lu = self.helmholtz_lu(k2)
            H = lu_solve(lu, np.eye(self.n))
            H[:, 0] = 0.0
            H[:, -1] = 0.0
            self._helm_inv[key] = H
        return self._helm_inv[key]


@dataclass
class GridFunction:
    """Complex samples of a function at the grid nodes."""

    grid: ChebyshevGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != (self.grid.n,):
            raise IncompatibleGridError(
                f"expected {self.grid.n} samples, got shape {self.values.shape}"
            )


def build_grid(n):
    """Build an n-node Gauss-Lobatto grid with derivative and quadrature data."""
    if n < 8:
        raise InvalidResolutionError(f"need at least 8 nodes, got {n}")
    nodes, d1 = _cheb_nodes_matrix(n)
    return ChebyshevGrid(
        n=n, nodes=nodes, d1=d1, d2=d1 @ d1, weights=_clencurt_weights(n)
    )


def _same_grid(g, grid):
    if g.grid is not grid and (g.grid.n != grid.n):
        raise IncompatibleGridError("grid mismatch")


def differentiate(g: GridFunction, order: int = 1) -> GridFunction:
    """First or second collocation derivative of g."""
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    mat = g.grid.d1 if order == 1 else g.grid.d2
    return GridFunction(g.grid, mat @ g.values)


def quad_integrate(g: GridFunction) -> complex:
    """Clenshaw-Curtis approximation of the integral of g over [-1, 1]."""
    return complex(g.grid.weights @ g.values)


def interpolate(g: GridFunction, points):
    """Barycentric evaluation of the interpolating polynomial off the nodes."""
    n = g.grid.n
    bw = (-1.0) ** np.arange(n)
    bw[0] *= 0.5
    bw[-1] *= 0.5
    pts = np.atleast_1d(np.asarray(points, dtype=float))
    out = np.empty(pts.shape, dtype=complex)
    for i, x in enumerate(pts):
        diff = x - g.grid.nodes
        hit = np.where(diff == 0.0)[0]
        if hit.size:
            out[i] = g.values[hit[0]]
        else:
            t = bw / diff
            out[i] = (t @ g.values) / t.sum()
    return out if np.ndim(points) else complex(out[0])


def helmholtz_inverse(w: GridFunction, k) -> GridFunction:
    """Solve (d2 - |k|^2) phi = w with phi(+-1) = 0.

    k is a wavenumber pair (k1, k3) with |k| >= 1.
    """
    k2 = float(k[0]) ** 2 + float(k[1]) ** 2
    if k2 < 1.0:
        raise ValueError(f"|k| >= 1 required, got |k|^2 = {k2}")
    grid = w.grid
    lu = grid.helmholtz_lu(k2)
    rhs = w.values.copy()
    rhs[0] = 0.0
    rhs[-1] = 0.0
    phi = lu_solve(lu, rhs)
    if not np.all(np.isfinite(phi)):
        raise LinearSolveError("Helmholtz solve produced non-finite values")
    # exact wall zeros must be imposed BEFORE the refinement step: the
    # near-wall rows of d2 are O(n^4), so even 1e-14 endpoint perturbations
    # applied after correction would dominate the interior residual
    phi[0] = 0.0
    phi[-1] = 0.0
    A = grid.d2.astype(np.longdouble)
    r = rhs.astype(np.clongdouble) - (
        A @ phi.astype(np.clongdouble) - np.clongdouble(k2) * phi.astype(np.clongdouble)
    )
    r[0] = 0.0
    r[-1] = 0.0
    dphi = lu_solve(lu, np.asarray(r, dtype=complex))
    dphi[0] = 0.0
    dphi[-1] = 0.0
    return GridFunction(grid, phi + dphi)
