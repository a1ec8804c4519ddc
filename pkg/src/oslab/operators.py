"""Discrete Orr-Sommerfeld and Rayleigh boundary-value problems.

Four operator kinds around the shear profile 1 - y^2:

  NavierSlip      second-order in the vorticity w, w(+-1)=0, with the
                  nonlocal coupling 2ik1*(d2-|k|^2)^{-1} (Dirichlet);
  LocalDirichlet  same without the nonlocal term;
  NonSlip         fourth-order in the stream function phi with clamped
                  rows phi(+-1) = phi'(+-1) = 0;
  Rayleigh        (1-y^2-lambda+i*delta) W + 2*Phi = f, no rows replaced.

Solution-map gains are operator norms of the forced solve measured between
the norms of `oslab.norms`, computed by power iteration on M*M against an
LU-backed dense solution matrix, with a dense-SVD oracle for cross-checks.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve, solve_triangular

from .errors import LinearSolveError, PowerIterationError
from .grid import ChebyshevGrid, GridFunction, build_grid
from .norms import NormKind, h1k_gram

__all__ = [
    "BC",
    "ModeProblem",
    "DiscreteOperator",
    "BvpSolution",
    "assemble",
    "solve_forced",
    "solution_map_gain",
    "dense_svd_gain",
    "GainSetup",
]


class BC:
    NAVIER_SLIP = "navier-slip"
    NON_SLIP = "non-slip"
    LOCAL_DIRICHLET = "local-dirichlet"
    RAYLEIGH = "rayleigh"


@dataclass(frozen=True)
class ModeProblem:
    """One boundary-value problem: viscosity, wavenumbers, spectral parameter."""

    nu: float
    k: tuple
    lam: complex
    bc: str = BC.NAVIER_SLIP
    eps_shift: float = 0.0
    delta: float = 0.0  # Rayleigh regularization only

    def __post_init__(self):
        if not (0.0 < self.nu <= 1.0):
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        k1, k3 = self.k
        if self.bc != BC.RAYLEIGH and (abs(k1) < 1 or int(k1) != k1):
            raise ValueError(f"|k1| >= 1 integer required, got k1={k1}")
        if int(k3) != k3:
            raise ValueError(f"k3 must be an integer, got {k3}")
        if self.bc == BC.RAYLEIGH and self.delta <= 0.0:
            raise ValueError("Rayleigh problems need delta > 0")
        if self.eps_shift > 0.1:
            raise ValueError(f"eps_shift must be <= 0.1, got {self.eps_shift}")
        object.__setattr__(self, "k", (float(k1), float(k3)))
        object.__setattr__(self, "lam", complex(self.lam))

    @property
    def k1(self):
        return self.k[0]

    @property
    def k3(self):
        return self.k[1]

    @property
    def k2(self):
        return self.k[0] ** 2 + self.k[1] ** 2

    def with_lam(self, lam):
        return ModeProblem(self.nu, self.k, lam, self.bc, self.eps_shift, self.delta)

    def shifted(self, eps=0.01):
        """Move lambda slightly below the real axis (the near-singular fallback)."""
        return self.with_lam(self.lam - 1j * eps * np.sqrt(self.nu / abs(self.k1)))


@dataclass
class DiscreteOperator:
    problem: ModeProblem
    grid: ChebyshevGrid
    matrix: np.ndarray
    bc_rows: tuple
    unknown_kind: str  # "vorticity" | "stream-function"
    _lu: tuple = field(default=None, repr=False)

    @property
    def free_rows(self):
        return np.setdiff1d(np.arange(self.grid.n), np.asarray(self.bc_rows, int))

    def lu(self):
        if self._lu is None:
            self._lu = lu_factor(self.matrix)
        return self._lu


@dataclass
class BvpSolution:
    w: GridFunction
    phi: GridFunction
    u_norm: float
    residual: float


def _slip_like_matrix(problem, grid, nonlocal_term):
    n = grid.n
    y = grid.nodes
    I = np.eye(n)
    k1, k2 = problem.k1, problem.k2
    A = (
        -problem.nu * (grid.d2 - k2 * I)
        + 1j * k1 * np.diag(1.0 - y**2 - problem.lam)
        - problem.eps_shift * np.sqrt(problem.nu * abs(k1)) * I
    ).astype(complex)
    if nonlocal_term:
        A += 2j * k1 * grid.helmholtz_inverse_matrix(k2)
    A[0] = 0.0
    A[0, 0] = 1.0
    A[-1] = 0.0
    A[-1, -1] = 1.0
    return A


def assemble(problem: ModeProblem, grid=None, n=129) -> DiscreteOperator:
    """Build the dense collocation matrix with its boundary rows in place."""
    grid = grid or build_grid(n)
    y = grid.nodes
    m = grid.n
    I = np.eye(m)
    k1, k2 = problem.k1, problem.k2

    if problem.bc in (BC.NAVIER_SLIP, BC.LOCAL_DIRICHLET):
        A = _slip_like_matrix(problem, grid, problem.bc == BC.NAVIER_SLIP)
        return DiscreteOperator(problem, grid, A, (0, m - 1), "vorticity")

    if problem.bc == BC.NON_SLIP:
        Dk = grid.d2 - k2 * I
        A = (
            -problem.nu * (Dk @ Dk)
            + 1j * k1 * (np.diag(1.0 - y**2 - problem.lam) @ Dk + 2.0 * I)
            - problem.eps_shift * np.sqrt(problem.nu * abs(k1)) * Dk
        ).astype(complex)
        A[0] = 0.0
        A[0, 0] = 1.0
        A[1] = grid.d1[0]
        A[-2] = grid.d1[-1]
        A[-1] = 0.0
        A[-1, -1] = 1.0
        return DiscreteOperator(problem, grid, A, (0, 1, m - 2, m - 1), "stream-function")

    if problem.bc == BC.RAYLEIGH:
        A = (
            np.diag(1.0 - y**2 - problem.lam + 1j * problem.delta)
            + 2.0 * grid.helmholtz_inverse_matrix(k2)
        ).astype(complex)
        return DiscreteOperator(problem, grid, A, (), "vorticity")

    raise ValueError(f"unknown bc kind {problem.bc!r}")


def _condition_estimate(A):
    # cheap 1-norm estimate; dense matrices are small enough to afford it
    try:
        return float(np.linalg.cond(A, 1))
    except np.linalg.LinAlgError:
        return np.inf


def solve_forced(op: DiscreteOperator, F) -> BvpSolution:
    """Solve op against forcing F; refine once against a long-double residual."""
    grid = op.grid
    values = F.values if isinstance(F, GridFunction) else np.asarray(F, dtype=complex)
    rhs = values.astype(complex).copy()
    rhs[list(op.bc_rows)] = 0.0
    lu = op.lu()
    x = lu_solve(lu, rhs)
    if not np.all(np.isfinite(x)):
        raise LinearSolveError(
            "singular or near-singular operator",
            condition_estimate=_condition_estimate(op.matrix),
        )
    # value rows of the unknown are zeroed BEFORE refinement: the O(n^4)
    # near-wall operator rows would amplify post-correction perturbations
    value_rows = [r for r in op.bc_rows if r in (0, grid.n - 1)]
    x[value_rows] = 0.0
    Ax = op.matrix.astype(np.clongdouble) @ x.astype(np.clongdouble)
    r = rhs.astype(np.clongdouble) - Ax
    dx = lu_solve(lu, np.asarray(r, dtype=complex))
    dx[value_rows] = 0.0
    if np.linalg.norm(dx) < np.linalg.norm(x):
        x = x + dx
        Ax = op.matrix.astype(np.clongdouble) @ x.astype(np.clongdouble)
        r = rhs.astype(np.clongdouble) - Ax
    scale = np.linalg.norm(rhs)
    residual = float(np.linalg.norm(np.asarray(r, complex))) / scale if scale else 0.0
    if residual > 1e-6:
        raise LinearSolveError(
            f"refined residual {residual:.3g} signals a near-singular solve; "
            "perturb the spectral parameter off the real axis",
            condition_estimate=_condition_estimate(op.matrix),
        )

    if op.unknown_kind == "vorticity":
        w = x
        lu_h = grid.helmholtz_lu(op.problem.k2)
        rh = w.copy()
        rh[0] = 0.0
        rh[-1] = 0.0
        phi = lu_solve(lu_h, rh)
        phi[0] = 0.0
        phi[-1] = 0.0
    else:
        phi = x
        w = (grid.d2 - op.problem.k2 * np.eye(grid.n)) @ phi

    q = grid.weights
    dphi = grid.d1 @ phi
    u_norm = float(np.sqrt(q @ (np.abs(dphi) ** 2 + op.problem.k2 * np.abs(phi) ** 2)))
    return BvpSolution(
        w=GridFunction(grid, w),
        phi=GridFunction(grid, phi),
        u_norm=u_norm,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# solution-map gains


class GainSetup:
    """Whitened dense solution map M for one problem/norm configuration.

    Input whitening: L2 sources use sqrt-quadrature weights; H1k sources the
    Cholesky factor of the H1k Gram on interior nodes; Hm1k sources are
    parametrized as F = S h with h in H^1_0, whose Hm1k norm is the H1k norm
    of h, so the same Gram applies.
    """

    def __init__(self, problem, grid, in_norm, out_quantity, out_norm="L2"):
        if isinstance(in_norm, NormKind):
            in_norm = in_norm.kind
        if isinstance(out_norm, NormKind):
            out_norm = out_norm.kind
        if in_norm not in ("L2", "H1k", "Hm1k"):
            raise ValueError(f"unsupported source norm {in_norm!r}")
        if out_quantity not in ("W", "Wprime", "U", "WL1"):
            raise ValueError(f"unknown output quantity {out_quantity!r}")
        if out_quantity != "WL1" and out_norm not in ("L2", "H1k"):
            raise ValueError(f"unsupported output norm {out_norm!r}")

        self.problem = problem
        self.grid = grid
        op = assemble(problem, grid)
        n = grid.n
        free = op.free_rows
        m = free.size
        q = grid.weights
        sq = np.sqrt(q)
        k2 = problem.k2

        E = np.zeros((n, m), dtype=complex)
        E[free, np.arange(m)] = 1.0
        if in_norm == "Hm1k":
            S = -(grid.d2 - k2 * np.eye(n))
            E = (S @ E).astype(complex)
            E[list(op.bc_rows)] = 0.0
        X = lu_solve(op.lu(), E)

        if op.unknown_kind == "vorticity":
            Wm = X
            Phi = grid.helmholtz_inverse_matrix(k2) @ X
        else:
            Phi = X
            Wm = (grid.d2 - k2 * np.eye(n)) @ X

        if out_quantity in ("W", "WL1"):
            Y = Wm
        elif out_quantity == "Wprime":
            Y = grid.d1 @ Wm
        else:  # U
            Y = np.vstack([grid.d1 @ Phi, np.sqrt(k2) * Phi])

        self.out_quantity = out_quantity
        if out_quantity == "WL1":
            Yw = Y  # raw samples; the weighted-l1 norm is applied in the sweep
        elif out_norm == "L2":
            wout = sq if Y.shape[0] == n else np.concatenate([sq, sq])
            Yw = wout[:, None] * Y
        else:  # H1k on a single-field output
            Yw = np.vstack([sq[:, None] * (grid.d1 @ Y), np.sqrt(k2) * sq[:, None] * Y])

        if in_norm == "L2":
            self.M = Yw / sq[free][None, :]
        else:
            G = h1k_gram(grid, k2)[np.ix_(free, free)]
            Lc = np.linalg.cholesky(G)
            self.M = solve_triangular(Lc, Yw.conj().T, lower=True).conj().T
        self._q = q

    def power_iteration_gain(self, tol=1e-6, maxiter=500):
        """Largest singular value of M via block power iteration on M*M.

        Deterministic two-vector block seeded with an all-ones vector and an
        odd companion: the shear profile is even in y, so its singular vectors
        split by parity and a single even seed stalls below the odd branch.
        The estimate is the top Ritz value of M on the iterated block.
        """
        M = self.M
        if self.out_quantity == "WL1":
            return self._l1_gain(tol, maxiter)
        m = M.shape[1]
        seed = np.stack(
            [
                np.ones(m, dtype=complex),
                np.linspace(-1.0, 1.0, m).astype(complex),
            ],
            axis=1,
        )
        X, _ = np.linalg.qr(seed)
        est = 0.0
        for _ in range(maxiter):
            Y = M @ X
            new_est = float(np.linalg.svd(Y, compute_uv=False)[0])
            Z = M.conj().T @ Y
            X, _ = np.linalg.qr(Z)
            if abs(new_est - est) <= tol * max(new_est, 1e-300):
                return new_est
            est = new_est
        raise PowerIterationError(
            f"no convergence in {maxiter} iterations",
            last_gain=est,
            last_residual=abs(new_est - est) / max(new_est, 1e-300),
        )

    def dense_svd_gain(self):
        if self.out_quantity == "WL1":
            raise ValueError("dense SVD applies to Hilbert-norm outputs only")
        return float(np.linalg.svd(self.M, compute_uv=False)[0])

    def _l1_gain(self, tol, maxiter):
        # alternating maximization of sum_j q_j |(M x)_j| over ||x||_2 = 1
        M = self.M
        q = self._q
        if M.shape[0] != q.size:
            raise ValueError("WL1 output expects single-field samples")
        m = M.shape[1]
        x = np.ones(m, dtype=complex) / np.sqrt(m)
        val = 0.0
        for _ in range(maxiter):
            w = M @ x
            aw = np.abs(w)
            new_val = float(q @ aw)
            g = q * np.where(aw > 0, w / np.where(aw > 0, aw, 1.0), 0.0)
            z = M.conj().T @ g
            zn = np.linalg.norm(z)
            if zn == 0.0:
                return 0.0
            x = z / zn
            if abs(new_val - val) <= tol * max(new_val, 1e-300):
                return new_val
            val = new_val
        raise PowerIterationError("L1 gain iteration did not converge", last_gain=val)


def solution_map_gain(
    problem: ModeProblem,
    in_norm="L2",
    out_quantity="W",
    out_norm="L2",
    grid=None,
    n=129,
    tol=1e-6,
    maxiter=500,
) -> float:
    """Operator norm of the forced solve, sup over F of ||out(F)|| / ||F||."""
    grid = grid or build_grid(n)
    setup = GainSetup(problem, grid, in_norm, out_quantity, out_norm)
    return setup.power_iteration_gain(tol=tol, maxiter=maxiter)


def dense_svd_gain(
    problem: ModeProblem, in_norm="L2", out_quantity="W", out_norm="L2", grid=None, n=65
) -> float:
    """Full dense singular-value oracle for the same weighted solution map."""
    grid = grid or build_grid(n)
    return GainSetup(problem, grid, in_norm, out_quantity, out_norm).dense_svd_gain()
