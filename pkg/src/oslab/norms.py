"""Norms used by the resolvent estimates, plus their Gram matrices.

The k-dependent pair is

    ||g||_{H1k}  = sqrt(||g'||^2 + |k|^2 ||g||^2),
    ||g||_{Hm1k} = sqrt(<g, S^{-1} g>),   S = -d2 + |k|^2 (Dirichlet),

the second being the dual of the first over functions vanishing at the walls.
"""

from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, differentiate, helmholtz_inverse

__all__ = ["NormKind", "norm", "h1k_gram", "l2_weight_sqrt"]

_KINDS = ("L1", "L2", "Linf", "H1k", "Hm1k")


@dataclass(frozen=True)
class NormKind:
    """A norm tag; H1k and Hm1k carry the wavenumber pair k=(k1,k3)."""

    kind: str
    k: tuple = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; use one of {_KINDS}")
        if self.kind in ("H1k", "Hm1k"):
            if self.k is None:
                raise ValueError(f"{self.kind} needs a wavenumber pair")
            object.__setattr__(self, "k", (float(self.k[0]), float(self.k[1])))

    @property
    def k2(self):
        return self.k[0] ** 2 + self.k[1] ** 2


def norm(g: GridFunction, kind: NormKind) -> float:
    """Evaluate ||g|| in the requested norm."""
    q = g.grid.weights
    v = g.values
    if kind.kind == "L2":
        return float(np.sqrt(q @ np.abs(v) ** 2))
    if kind.kind == "L1":
        return float(q @ np.abs(v))
    if kind.kind == "Linf":
        return float(np.max(np.abs(v)))
    if kind.kind == "H1k":
        dv = differentiate(g, 1).values
        return float(np.sqrt(q @ np.abs(dv) ** 2 + kind.k2 * (q @ np.abs(v) ** 2)))
    # Hm1k: <g, S^{-1} g> with S = -(d2 - |k|^2), Dirichlet rows
    phi = helmholtz_inverse(g, kind.k).values  # solves (d2 - k2) phi = g
    val = float(np.real(q @ (g.values * np.conj(-phi))))
    return float(np.sqrt(max(val, 0.0)))


def h1k_gram(grid, k2):
    """Gram matrix of the H1k inner product: D^T Q D + |k|^2 Q."""
    Q = grid.weights
    D = grid.d1
    return D.T @ (Q[:, None] * D) + k2 * np.diag(Q)


def l2_weight_sqrt(grid):
    """Diagonal square-root weight turning samples into an l2-isometry of L2."""
    return np.sqrt(grid.weights)
