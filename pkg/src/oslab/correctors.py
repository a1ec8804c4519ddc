"""Wall-layer correctors for converting slip solves into non-slip solves.

The homogeneous correctors psi_1, psi_2 (unit wall slopes at y=+1 / y=-1)
are assembled from two Airy-shaped wall profiles plus exactly-solved error
parts, glued by the sinh-moment matching system.  Because the error parts
are solved against the *discrete* residual of the sampled profiles, the
resulting decomposition reproduces the direct fourth-order solve to solver
precision, not merely asymptotically.
"""

from dataclasses import dataclass

import numpy as np

from .airy import a0, airy_ai_guarded
from .errors import DegenerateDeterminantError, UnderResolvedError
from .grid import GridFunction, build_grid
from .operators import BC, ModeProblem, assemble, solve_forced

__all__ = [
    "AiryParams",
    "AiryProfiles",
    "CorrectorSet",
    "NonSlipDecomposition",
    "airy_params",
    "build_airy_profiles",
    "solve_error_correctors",
    "corrector_coefficients",
    "nonslip_via_decomposition",
    "corrector_csv_row",
]

_ROT = np.exp(1j * np.pi / 6)


@dataclass(frozen=True)
class AiryParams:
    """Layer scale L = |2 k1 / nu|^(1/3) and complex offset d."""

    L: float
    d: complex

    @property
    def Ld(self):
        return self.L * self.d


def airy_params(problem: ModeProblem, eps_sign=+1) -> AiryParams:
    """Parameters of the wall-layer profiles.

    eps_sign selects the sign of the shift term i*eps*sqrt(nu/|k1|)/2 in d
    (the two conventions differ in the source text; the default is +).
    """
    L = abs(2.0 * problem.k1 / problem.nu) ** (1.0 / 3.0)
    d = (
        -problem.lam / 2.0
        - 1j * problem.nu * problem.k2 / (2.0 * problem.k1)
        + eps_sign * 1j * problem.eps_shift * np.sqrt(problem.nu / abs(problem.k1)) / 2.0
    )
    return AiryParams(L=L, d=complex(d))


@dataclass
class AiryProfiles:
    problem: ModeProblem
    grid: object
    params: AiryParams
    W1: GridFunction
    W2: GridFunction
    Phi1: GridFunction
    Phi2: GridFunction
    ode_residual: float


@dataclass
class CorrectorSet:
    problem: ModeProblem
    params: AiryParams
    profiles: AiryProfiles
    w_err1: GridFunction
    w_err2: GridFunction
    A1: complex
    A2: complex
    B1: complex
    B2: complex
    C11: complex
    C12: complex
    C21: complex
    C22: complex
    w1: GridFunction
    w2: GridFunction
    psi1: GridFunction
    psi2: GridFunction
    a0_at_Ld: complex


@dataclass
class NonSlipDecomposition:
    problem: ModeProblem
    phi_na: GridFunction
    w_na: GridFunction
    c1: complex
    c2: complex
    phi_total: GridFunction
    w_total: GridFunction
    correctors: CorrectorSet


def _layer_node_count(grid, L):
    near_lower = np.count_nonzero(grid.nodes + 1.0 < 1.0 / L)
    near_upper = np.count_nonzero(1.0 - grid.nodes < 1.0 / L)
    return min(near_lower, near_upper)


def _slip_action(problem, grid, w):
    """Discrete slip operator applied to raw samples (no boundary rows)."""
    y = grid.nodes
    k1, k2 = problem.k1, problem.k2
    Dk = grid.d2 @ w - k2 * w
    phi = grid.helmholtz_inverse_matrix(k2) @ w
    return (
        -problem.nu * Dk
        + 1j * k1 * ((1.0 - y**2 - problem.lam) * w + 2.0 * phi)
        - problem.eps_shift * np.sqrt(problem.nu * abs(k1)) * w
    )


def build_airy_profiles(problem: ModeProblem, grid=None, n=129, eps_sign=+1) -> AiryProfiles:
    """Sample the two wall profiles and their Dirichlet stream functions.

    k1 < 0 is handled by conjugation symmetry of the k1 > 0 profiles.
    """
    grid = grid or build_grid(n)
    if problem.k1 < 0:
        conj = build_airy_profiles(
            ModeProblem(problem.nu, (-problem.k1, problem.k3), np.conj(problem.lam),
                        problem.bc, problem.eps_shift, problem.delta),
            grid=grid, eps_sign=eps_sign,
        )
        return AiryProfiles(
            problem, grid, AiryParams(conj.params.L, np.conj(conj.params.d)),
            GridFunction(grid, np.conj(conj.W1.values)),
            GridFunction(grid, np.conj(conj.W2.values)),
            GridFunction(grid, np.conj(conj.Phi1.values)),
            GridFunction(grid, np.conj(conj.Phi2.values)),
            conj.ode_residual,
        )

    params = airy_params(problem, eps_sign=eps_sign)
    if _layer_node_count(grid, params.L) < 3:
        raise UnderResolvedError(
            f"fewer than 3 nodes within 1/L = {1.0 / params.L:.3g} of the walls; "
            f"increase n beyond {grid.n}"
        )
    y = grid.nodes
    L, d = params.L, params.d
    W1 = airy_ai_guarded(_ROT * L * (y + 1.0 + d))
    W2 = airy_ai_guarded(_ROT * L * (1.0 - y + d))
    H = grid.helmholtz_inverse_matrix(problem.k2)
    Phi1 = H @ W1
    Phi2 = H @ W2

    # residual of the layer ODE for W1, measured discretely
    k1 = problem.k1
    q = grid.weights
    res = (
        -problem.nu * (grid.d2 @ W1 - problem.k2 * W1)
        + 1j * k1 * (2.0 * (1.0 + y) - problem.lam) * W1
        - problem.eps_shift * np.sqrt(problem.nu * abs(k1)) * W1
    )
    scale = np.sqrt(q @ np.abs(W1) ** 2)
    ode_residual = float(np.sqrt(q @ np.abs(res) ** 2) / scale) if scale else 0.0

    return AiryProfiles(
        problem, grid, params,
        GridFunction(grid, W1), GridFunction(grid, W2),
        GridFunction(grid, Phi1), GridFunction(grid, Phi2),
        ode_residual,
    )


def solve_error_correctors(problem: ModeProblem, profiles: AiryProfiles):
    """Solve the slip problem against minus the discrete residual of each profile.

    The forcing equals i*k1*(1 +- y)^2*W_i - 2i*k1*Phi_i up to the spectral
    sampling error of the profiles, and by construction makes W_i + w_err_i
    an exact discrete solution of the homogeneous slip operator.
    """
    grid = profiles.grid
    slip = ModeProblem(problem.nu, problem.k, problem.lam, BC.NAVIER_SLIP,
                       problem.eps_shift)
    op = assemble(slip, grid)
    F1 = -_slip_action(slip, grid, profiles.W1.values)
    F2 = -_slip_action(slip, grid, profiles.W2.values)
    e1 = solve_forced(op, GridFunction(grid, F1))
    e2 = solve_forced(op, GridFunction(grid, F2))
    return e1.w, e2.w


def corrector_coefficients(problem: ModeProblem, profiles: AiryProfiles,
                           errors=None) -> CorrectorSet:
    """Sinh-moment matching: boundary-condition algebra of the correctors."""
    grid = profiles.grid
    if errors is None:
        errors = solve_error_correctors(problem, profiles)
    w_err1, w_err2 = errors
    y = grid.nodes
    q = grid.weights
    kk = np.sqrt(problem.k2)
    sh_p = np.sinh(kk * (1.0 + y))
    sh_m = np.sinh(kk * (1.0 - y))
    t1 = profiles.W1.values + w_err1.values
    t2 = profiles.W2.values + w_err2.values

    A1 = complex(q @ (sh_p * t1))
    A2 = complex(q @ (sh_m * t2))
    B1 = complex(q @ (sh_m * t1))
    B2 = complex(q @ (sh_p * t2))
    det = A1 * A2 - B1 * B2
    if abs(det) < 1e-12 * max(abs(B1 * B2), 1e-300):
        raise DegenerateDeterminantError(
            f"matching determinant degenerate (L = {profiles.params.L:.3g})",
            layer_scale=profiles.params.L,
        )
    s2k = np.sinh(2.0 * kk)
    C11 = s2k * A2 / det
    C12 = -s2k * B1 / det
    C21 = s2k * B2 / det
    C22 = -s2k * A1 / det

    w1 = C11 * t1 + C12 * t2
    w2 = C21 * t1 + C22 * t2
    H = grid.helmholtz_inverse_matrix(problem.k2)
    return CorrectorSet(
        problem=problem, params=profiles.params, profiles=profiles,
        w_err1=w_err1, w_err2=w_err2,
        A1=A1, A2=A2, B1=B1, B2=B2,
        C11=complex(C11), C12=complex(C12), C21=complex(C21), C22=complex(C22),
        w1=GridFunction(grid, w1), w2=GridFunction(grid, w2),
        psi1=GridFunction(grid, H @ w1), psi2=GridFunction(grid, H @ w2),
        a0_at_Ld=a0(profiles.params.Ld),
    )


def nonslip_via_decomposition(problem: ModeProblem, F, grid=None, n=129,
                              correctors=None) -> NonSlipDecomposition:
    """Non-slip solve assembled as slip part + c1*psi1 + c2*psi2."""
    if correctors is not None:
        grid = correctors.profiles.grid
    else:
        grid = grid or build_grid(n)
        profiles = build_airy_profiles(problem, grid=grid)
        correctors = corrector_coefficients(problem, profiles)

    slip = ModeProblem(problem.nu, problem.k, problem.lam, BC.NAVIER_SLIP,
                       problem.eps_shift)
    sol = solve_forced(assemble(slip, grid), F)
    y = grid.nodes
    q = grid.weights
    kk = np.sqrt(problem.k2)
    s2k = np.sinh(2.0 * kk)
    c1 = -complex(q @ (np.sinh(kk * (1.0 + y)) * sol.w.values)) / s2k
    c2 = complex(q @ (np.sinh(kk * (1.0 - y)) * sol.w.values)) / s2k

    phi_total = sol.phi.values + c1 * correctors.psi1.values + c2 * correctors.psi2.values
    w_total = sol.w.values + c1 * correctors.w1.values + c2 * correctors.w2.values
    return NonSlipDecomposition(
        problem=problem, phi_na=sol.phi, w_na=sol.w, c1=c1, c2=c2,
        phi_total=GridFunction(grid, phi_total),
        w_total=GridFunction(grid, w_total),
        correctors=correctors,
    )


def corrector_csv_row(decomposition: NonSlipDecomposition, decomposition_err):
    """Row for the corrector export: scales, coefficient sizes, oracle error."""
    problem = decomposition.problem
    cset = decomposition.correctors
    return {
        "nu": problem.nu,
        "k1": problem.k1,
        "k3": problem.k3,
        "lambda": float(np.real(problem.lam)),
        "L": cset.params.L,
        "abs_A0": abs(cset.a0_at_Ld),
        "abs_C11": abs(cset.C11),
        "abs_C12": abs(cset.C12),
        "abs_c1": abs(decomposition.c1),
        "abs_c2": abs(decomposition.c2),
        "decomposition_err": decomposition_err,
    }
