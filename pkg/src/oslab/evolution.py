"""Crank-Nicolson evolution of the linearized single-mode systems.

Three kinds:

  LocalH         d_t w + [-nu*(d2-|k|^2) + i k1 (1-y^2)] w = F,  w(+-1)=0
  NonlocalL      same plus the coupling 2 i k1 * (d2-|k|^2)^{-1} w, evolved
                 in the stream function with clamped walls
                 (phi(+-1) = phi'(+-1) = 0)
  RayleighEuler  d_t w + i k1 (1-y^2) w + 2 i k1 psi = F,  psi(+-1)=0

All linear terms are implicit; one LU factorization is reused for the whole
trajectory.  Norm time-series are recorded every step; states are stored at
a stride.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import CflError, InstabilityError, OrthogonalityError, WeightTooLargeError
from .grid import GridFunction, build_grid

__all__ = [
    "LOCAL_H",
    "NONLOCAL_L",
    "RAYLEIGH_EULER",
    "ModeTrajectory",
    "SpaceTimeReport",
    "evolve",
    "fit_decay",
    "spacetime_report",
]

LOCAL_H = "local-h"
NONLOCAL_L = "nonlocal-l"
RAYLEIGH_EULER = "rayleigh-euler"


@dataclass
class ModeTrajectory:
    kind: str
    nu: float
    k: tuple
    dt: float
    times: np.ndarray                    # every step
    norms: dict                          # name -> array over times
    state_times: np.ndarray
    omega_states: list
    phi_states: list
    grid: object
    forcing_desc: str = "none"

    def state_at(self, idx):
        return (
            GridFunction(self.grid, self.omega_states[idx]),
            GridFunction(self.grid, self.phi_states[idx]),
        )


def _check_orthogonality(grid, k2, omega0, tol=1e-10):
    y = grid.nodes
    q = grid.weights
    kk = np.sqrt(k2)
    scale = max(np.sqrt(q @ np.abs(omega0) ** 2), 1e-300)
    for s in (+1.0, -1.0):
        m = abs(q @ (np.exp(s * kk * y) * omega0)) / (np.exp(kk) * scale)
        if m > tol:
            raise OrthogonalityError(
                f"<omega0, e^{'+' if s > 0 else '-'}|k|y> = {m:.3g} exceeds {tol:g}"
            )


def _nonlocal_matrices(grid, nu, k1, k2, dt):
    n = grid.n
    I = np.eye(n)
    Dk = grid.d2 - k2 * I
    M = (-nu * (Dk @ Dk) + 1j * k1 * (np.diag(1.0 - grid.nodes**2) @ Dk + 2.0 * I))
    lhs = (Dk + 0.5 * dt * M).astype(complex)
    rhs = (Dk - 0.5 * dt * M).astype(complex)
    for row, vec in ((0, None), (1, grid.d1[0]), (n - 2, grid.d1[-1]), (n - 1, None)):
        lhs[row] = 0.0
        rhs[row] = 0.0
        if vec is None:
            lhs[row, row] = 1.0
        else:
            lhs[row] = vec
    return lhs, rhs, Dk


def _local_matrices(grid, nu, k1, k2, dt):
    n = grid.n
    I = np.eye(n)
    H = -nu * (grid.d2 - k2 * I) + 1j * k1 * np.diag(1.0 - grid.nodes**2)
    lhs = (I + 0.5 * dt * H).astype(complex)
    rhs = (I - 0.5 * dt * H).astype(complex)
    for row in (0, n - 1):
        lhs[row] = 0.0
        lhs[row, row] = 1.0
        rhs[row] = 0.0
    return lhs, rhs


def _rayleigh_matrices(grid, k1, k2, dt):
    n = grid.n
    I = np.eye(n)
    R = 1j * k1 * (np.diag(1.0 - grid.nodes**2) + 2.0 * grid.helmholtz_inverse_matrix(k2))
    lhs = (I + 0.5 * dt * R).astype(complex)
    rhs = (I - 0.5 * dt * R).astype(complex)
    return lhs, rhs


def evolve(kind, nu, k, omega0, forcing=None, T=10.0, dt=0.01, grid=None, n=129,
           store_stride=None) -> ModeTrajectory:
    """Integrate one mode from omega0 to time T.

    forcing may be None, a constant array, or a callable t -> array giving
    the right-hand side F(t).  NonlocalL initial data must satisfy the wall
    moments <omega0, e^{+-|k|y}> = 0.
    """
    k1, k3 = k
    k2 = float(k1) ** 2 + float(k3) ** 2
    if dt > 0.5 / abs(k1):
        raise CflError(f"dt = {dt:g} exceeds the advective limit 0.5/|k1|")
    grid = grid or build_grid(n)
    nsteps = int(round(T / dt))
    omega0 = np.asarray(omega0.values if isinstance(omega0, GridFunction) else omega0,
                        dtype=complex)

    if forcing is None:
        force = None
        forcing_desc = "none"
    elif callable(forcing):
        force = lambda t: np.asarray(forcing(t), dtype=complex)
        forcing_desc = "callable"
    else:
        fixed = np.asarray(forcing, dtype=complex)
        force = lambda t: fixed
        forcing_desc = "constant"

    q = grid.weights
    kk = np.sqrt(k2)
    Hmat = grid.helmholtz_inverse_matrix(k2)

    if kind == NONLOCAL_L:
        _check_orthogonality(grid, k2, omega0)
        lhs, rhs, Dk = _nonlocal_matrices(grid, nu, k1, k2, dt)
        lu = lu_factor(lhs)
        phi = Hmat @ omega0
        state = phi

        def unpack(state):
            om = Dk @ state
            return om, state

        def step(state, t):
            b = rhs @ state
            if force is not None:
                favg = 0.5 * (force(t) + force(t + dt))
                b += dt * favg
                b[[0, 1, -2, -1]] = 0.0
            return lu_solve(lu, b)

    elif kind == LOCAL_H:
        lhs, rhs = _local_matrices(grid, nu, k1, k2, dt)
        lu = lu_factor(lhs)
        state = omega0.copy()
        state[0] = 0.0
        state[-1] = 0.0

        def unpack(state):
            return state, Hmat @ state

        def step(state, t):
            b = rhs @ state
            if force is not None:
                favg = 0.5 * (force(t) + force(t + dt))
                b += dt * favg
                b[[0, -1]] = 0.0
            return lu_solve(lu, b)

    elif kind == RAYLEIGH_EULER:
        lhs, rhs = _rayleigh_matrices(grid, k1, k2, dt)
        lu = lu_factor(lhs)
        state = omega0.copy()

        def unpack(state):
            return state, Hmat @ state

        def step(state, t):
            b = rhs @ state
            if force is not None:
                b += dt * 0.5 * (force(t) + force(t + dt))
            return lu_solve(lu, b)

    else:
        raise ValueError(f"unknown system kind {kind!r}")

    stride = store_stride or max(1, nsteps // 400)
    times = np.zeros(nsteps + 1)
    names = ("omega_l2", "domega_l2", "u_l2", "kpsi_l2", "dpsi_wall")
    norms = {name: np.zeros(nsteps + 1) for name in names}
    state_times = []
    omega_states = []
    phi_states = []

    def record(i, t, state):
        om, phi = unpack(state)
        dom = grid.d1 @ om
        dphi = grid.d1 @ phi
        norms["omega_l2"][i] = np.sqrt(q @ np.abs(om) ** 2)
        norms["domega_l2"][i] = np.sqrt(q @ np.abs(dom) ** 2)
        norms["u_l2"][i] = np.sqrt(q @ (np.abs(dphi) ** 2 + k2 * np.abs(phi) ** 2))
        norms["kpsi_l2"][i] = kk * np.sqrt(q @ np.abs(phi) ** 2)
        norms["dpsi_wall"][i] = np.sqrt(abs(dphi[0]) ** 2 + abs(dphi[-1]) ** 2)
        times[i] = t
        if i % stride == 0 or i == nsteps:
            state_times.append(t)
            omega_states.append(om.copy())
            phi_states.append(phi.copy())

    record(0, 0.0, state)
    scale0 = max(norms["omega_l2"][0], 1e-300)
    for i in range(1, nsteps + 1):
        state = step(state, (i - 1) * dt)
        record(i, i * dt, state)
        if norms["omega_l2"][i] > 1e6 * scale0 or not np.isfinite(norms["omega_l2"][i]):
            raise InstabilityError(
                f"norm grew by more than 1e6 at t = {i * dt:g}",
                diagnostic={"t": i * dt, "norm": norms["omega_l2"][i]},
            )

    return ModeTrajectory(
        kind=kind, nu=nu, k=(float(k1), float(k3)), dt=dt, times=times,
        norms=norms, state_times=np.asarray(state_times),
        omega_states=omega_states, phi_states=phi_states, grid=grid,
        forcing_desc=forcing_desc,
    )


def fit_decay(traj: ModeTrajectory, quantity="omega_l2", window=None, algebraic=False):
    """Fit a decay law to one recorded norm over a time window.

    Exponential: least squares of log ||q(t)|| against t, returns the rate r
    in e^{-r t}.  Algebraic: regress against log t, returns the exponent p in
    t^p.  Windows with fewer than 20 samples are rejected; values below the
    1e-14 floor are dropped with a warning-carrying truncation.
    """
    t = traj.times
    vals = traj.norms[quantity]
    if window is None:
        window = (t[0] if not algebraic else max(t[1], 1e-6), t[-1])
    sel = (t >= window[0]) & (t <= window[1])
    if np.count_nonzero(sel) < 20:
        raise ValueError("window must contain at least 20 samples")
    tt = t[sel]
    vv = vals[sel]
    alive = vv > 1e-14
    truncated = not alive.all()
    tt, vv = tt[alive], vv[alive]
    if tt.size < 20:
        raise ValueError("window truncated below 20 usable samples")
    if algebraic:
        slope, _ = np.polyfit(np.log(tt), np.log(vv), 1)
        return {"algebraic_exponent": float(slope), "truncated": truncated}
    slope, _ = np.polyfit(tt, np.log(vv), 1)
    return {"rate": float(-slope), "truncated": truncated}


@dataclass
class SpaceTimeReport:
    c_weight: float
    sup_norms: dict
    integral_norms: dict
    theorem_ratio: float
    rhs_data: float
    fields: dict = field(default_factory=dict)


def spacetime_report(traj: ModeTrajectory, c_weight, omega0_data=None,
                     forcing_l2l2=0.0) -> SpaceTimeReport:
    """Weighted space-time norms and their ratio to the data terms.

    c_weight scales the exponential weight e^{c_weight * sqrt(nu) * t}; it
    must stay below the measured decay rate divided by sqrt(nu).  The ratio
    denominator is ||(d2-|k|^2) omega0||^2 plus nu^{-1} times the supplied
    weighted forcing integral.
    """
    nu = traj.nu
    k1, k3 = traj.k
    k2 = k1**2 + k3**2
    kk = np.sqrt(k2)
    t = traj.times
    weight = np.exp(c_weight * np.sqrt(nu) * t)

    w_omega = weight * traj.norms["omega_l2"]
    if w_omega[-1] > 10.0 * max(w_omega[0], 1e-300):
        raise WeightTooLargeError(
            f"weighted norm grows by {w_omega[-1] / max(w_omega[0], 1e-300):.3g}; "
            "reduce c_weight"
        )

    sup_norms = {}
    integral_norms = {}
    for name in ("omega_l2", "domega_l2", "u_l2"):
        series = weight * traj.norms[name]
        sup_norms[name] = float(np.max(series))
        integral_norms[name] = float(np.trapezoid(series**2, t))

    if omega0_data is None:
        om0 = traj.omega_states[0]
        lap = traj.grid.d2 @ om0 - k2 * om0
        omega0_data = float(traj.grid.weights @ np.abs(lap) ** 2)
    rhs = omega0_data + forcing_l2l2 / nu

    lhs = (
        (kk + np.sqrt(nu) * k2) * sup_norms["u_l2"] ** 2
        + (abs(k1) + np.sqrt(nu) * abs(k1) * kk) * integral_norms["u_l2"]
        + (nu * kk + nu**1.5 * k2) * integral_norms["omega_l2"]
        + nu**0.75 * kk**0.75 * abs(k1) ** 0.25 * integral_norms["omega_l2"]
        + nu ** (7.0 / 12.0)
        * (sup_norms["omega_l2"] ** 2 + nu * integral_norms["domega_l2"])
    )
    return SpaceTimeReport(
        c_weight=c_weight,
        sup_norms=sup_norms,
        integral_norms=integral_norms,
        theorem_ratio=float(lhs / rhs),
        rhs_data=float(rhs),
        fields={"lhs": float(lhs)},
    )
