"""Snakeboard on Q = S^1 x S^1 x SE(2), coordinates (phi, psi, x, y, theta).

phi is the common steering angle (front axle at phi, back at -phi), psi the
rotor angle.  The distribution is span{d_phi, d_psi, s} with
s = a d_x + b d_y + c d_theta.  The horizontal space of the bundle
Q -> T^2 is span{u_1, u_2}; u_3 spans the vertical part of the distribution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..constraints import MechanicalSystem
from ..errors import SingularShape
from ..geometry import MetricField
from ..reconstruction import act, hat, integrate_mean_reconstruction
from ..sde import Calculus, SDEProblem, TimeGrid, ensemble_run, integrate

PHI, PSI, X, Y, TH = range(5)
EPS_TOL = 1e-10
SHAPE = [PHI, PSI]
GROUP = (X, Y, TH)


@dataclass(frozen=True)
class SnakeboardParams:
    """Board inertia, axle geometry, noise strength and the sinusoidal gait.

    ``J_0`` is kept for completeness; the kinetic energy only involves
    K = J_theta + J_psi + J_phi.
    """

    m: float = 1.0
    J_0: float = 0.2
    J_phi: float = 0.5
    J_psi: float = 0.05
    J_theta: float = 0.2
    r: float = 0.5
    sigma: float = 0.3
    a_phi: float = 0.5
    omega_phi: float = 4.0
    a_psi: float = 1.0
    omega_psi: float = 4.0

    def __post_init__(self):
        for name in ("m", "J_0", "J_phi", "J_psi", "J_theta", "r"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    @property
    def K(self) -> float:
        return self.J_theta + self.J_psi + self.J_phi


# -- scalar fields ------------------------------------------------------------

def abc(p: SnakeboardParams, q):
    """Components (a, b, c) of s at q."""
    q = np.asarray(q, dtype=float)
    phi, th = q[..., PHI], q[..., TH]
    cp = np.cos(phi)
    a = -p.r * (cp * np.cos(th - phi) + cp * np.cos(th + phi))
    b = -p.r * (cp * np.sin(th - phi) + cp * np.sin(th + phi))
    c = np.sin(2 * phi)
    return a, b, c


def dtheta_ab(p: SnakeboardParams, q):
    """(d_theta a, d_theta b) at q."""
    a, b, _ = abc(p, q)
    return -b, a


def eps(p: SnakeboardParams, phi):
    phi = np.asarray(phi, dtype=float)
    return 4 * p.m * p.r**2 * np.cos(phi) ** 4 + p.K * np.sin(2 * phi) ** 2


def eta(p: SnakeboardParams, phi):
    e = eps(p, phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        return p.J_psi * (1.0 - p.J_psi * np.sin(2 * np.asarray(phi, float)) ** 2 / e)


def regular(p: SnakeboardParams, q) -> np.ndarray:
    """Mask of configurations away from the singular steering set."""
    phi = np.asarray(q, dtype=float)[..., PHI]
    return (eps(p, phi) >= EPS_TOL) & (eta(p, phi) > 0)


def check_regular(p: SnakeboardParams, q) -> None:
    if not np.all(regular(p, q)):
        raise SingularShape("steering angle on the singular set (epsilon ~ 0 or eta <= 0)")


# -- geometry -----------------------------------------------------------------

def metric(p: SnakeboardParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    G = np.zeros(q.shape[:-1] + (5, 5))
    G[..., X, X] = p.m
    G[..., Y, Y] = p.m
    G[..., TH, TH] = p.K
    G[..., PHI, PHI] = p.J_phi
    G[..., PSI, PSI] = p.J_psi
    G[..., PSI, TH] = G[..., TH, PSI] = p.J_psi
    return G


def constraint_forms(p: SnakeboardParams, q) -> np.ndarray:
    """Rows omega_1, omega_2 (no-slip at the front and back wheels).

    omega_2 carries +r cos(phi) d_theta so that s lies in the kernel of both.
    """
    q = np.asarray(q, dtype=float)
    phi, th = q[..., PHI], q[..., TH]
    W = np.zeros(q.shape[:-1] + (2, 5))
    W[..., 0, X] = -np.sin(th + phi)
    W[..., 0, Y] = np.cos(th + phi)
    W[..., 0, TH] = -p.r * np.cos(phi)
    W[..., 1, X] = -np.sin(th - phi)
    W[..., 1, Y] = np.cos(th - phi)
    W[..., 1, TH] = p.r * np.cos(phi)
    return W


def s_field(p: SnakeboardParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    a, b, c = abc(p, q)
    out = np.zeros(q.shape)
    out[..., X], out[..., Y], out[..., TH] = a, b, c
    return out


def frame_seed(p: SnakeboardParams, q) -> np.ndarray:
    """(d_phi, d_psi, s), orthonormalized in the order d_phi, s, d_psi."""
    q = np.asarray(q, dtype=float)
    V = np.zeros(q.shape + (3,))
    V[..., PHI, 0] = 1.0
    V[..., PSI, 1] = 1.0
    V[..., :, 2] = s_field(p, q)
    return V


FRAME_ORDER = (0, 2, 1)


def frame(p: SnakeboardParams, q) -> np.ndarray:
    """Closed-form orthonormal frame (u_1, u_2, u_3) as (..., 5, 3)."""
    q = np.asarray(q, dtype=float)
    phi = q[..., PHI]
    e, n = eps(p, phi), eta(p, phi)
    _, _, c = abc(p, q)
    s = s_field(p, q)
    U = np.zeros(q.shape + (3,))
    U[..., PHI, 0] = p.J_phi**-0.5
    u2 = -(p.J_psi * c / e)[..., None] * s
    u2[..., PSI] += 1.0
    U[..., :, 1] = u2 / np.sqrt(n)[..., None]
    U[..., :, 2] = s / np.sqrt(e)[..., None]
    return U


def se2_generators(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (3, 5))
    out[..., 0, X] = 1.0
    out[..., 1, Y] = 1.0
    out[..., 2, X] = -q[..., Y]
    out[..., 2, Y] = q[..., X]
    out[..., 2, TH] = 1.0
    return out


def connection_form(p: SnakeboardParams, q) -> np.ndarray:
    """se(2)-valued connection whose kernel is span{u_1, u_2}; rows x, y, rotation."""
    q = np.asarray(q, dtype=float)
    x, y, phi = q[..., X], q[..., Y], q[..., PHI]
    a, b, c = abc(p, q)
    k = p.J_psi * c / eps(p, phi)
    A = np.zeros(q.shape[:-1] + (3, 5))
    A[..., 0, PSI] = k * (a + y * c)
    A[..., 0, X] = 1.0
    A[..., 0, TH] = y
    A[..., 1, PSI] = k * (b - x * c)
    A[..., 1, Y] = 1.0
    A[..., 1, TH] = -x
    A[..., 2, PSI] = k * c
    A[..., 2, TH] = 1.0
    return A


def snakeboard_system(p: SnakeboardParams) -> MechanicalSystem:
    mf = MetricField(5, lambda q: metric(p, q))
    return MechanicalSystem(5, mf, lambda q: constraint_forms(p, q), 3,
                            periodic_mask=np.array([1, 1, 0, 0, 1], bool),
                            frame_seed=lambda q: frame_seed(p, q), frame_order=FRAME_ORDER,
                            name="snakeboard", params=p)


# -- controls -------------------------------------------------------------------

def gait(p: SnakeboardParams, t):
    """Shape inputs (u_phi(t), u_psi(t))."""
    return p.a_phi * np.sin(p.omega_phi * t), p.a_psi * np.sin(p.omega_psi * t)


def gait_rate(p: SnakeboardParams, t):
    return (p.a_phi * p.omega_phi * np.cos(p.omega_phi * t),
            p.a_psi * p.omega_psi * np.cos(p.omega_psi * t))


def control_lift(p: SnakeboardParams, t, q) -> np.ndarray:
    """hl(U_phi + U_psi) = u_phi' d_phi + u_psi' (d_psi - J_psi (c / eps) s)."""
    q = np.asarray(q, dtype=float)
    dphi, dpsi = gait_rate(p, t)
    _, _, c = abc(p, q)
    k = p.J_psi * c / eps(p, q[..., PHI])
    out = -(dpsi * k)[..., None] * s_field(p, q)
    out[..., PHI] += dphi
    out[..., PSI] += dpsi
    return out


def ito_correction(p: SnakeboardParams, q) -> np.ndarray:
    """1/2 sigma^2 sum_{a<=2} (D u_a) u_a for the horizontal noise."""
    q = np.asarray(q, dtype=float)
    phi = q[..., PHI]
    _, _, c = abc(p, q)
    da, db = dtheta_ab(p, q)
    k = p.sigma**2 * p.J_psi**2 * c**3 / (2 * eta(p, phi) * eps(p, phi) ** 2)
    out = np.zeros(q.shape)
    out[..., X] = k * da
    out[..., Y] = k * db
    return out


def controlled_problem(p: SnakeboardParams) -> SDEProblem:
    """Full controlled constrained Brownian motion (Stratonovich, three noises)."""
    return SDEProblem(5, lambda t, Q: control_lift(p, t, Q),
                      lambda t, Q: p.sigma * frame(p, Q), 3,
                      Calculus.STRATONOVICH, valid=lambda Q: regular(p, Q))


def horizontal_problem(p: SnakeboardParams) -> SDEProblem:
    """Horizontal lift X^h of the shape process (Stratonovich, u_1 and u_2)."""
    return SDEProblem(5, lambda t, Q: control_lift(p, t, Q),
                      lambda t, Q: p.sigma * frame(p, Q)[..., :2], 2,
                      Calculus.STRATONOVICH, valid=lambda Q: regular(p, Q))


def horizontal_problem_ito(p: SnakeboardParams) -> SDEProblem:
    """Ito form of the horizontal lift with the closed-form correction."""
    return SDEProblem(5, lambda t, Q: control_lift(p, t, Q) + ito_correction(p, Q),
                      lambda t, Q: p.sigma * frame(p, Q)[..., :2], 2,
                      Calculus.ITO, valid=lambda Q: regular(p, Q))


def shape_problem(p: SnakeboardParams) -> SDEProblem:
    """Projected process on the (phi, psi) torus."""

    def drift(t, Q):
        dphi, dpsi = gait_rate(p, t)
        out = np.zeros(np.shape(Q))
        out[..., 0] = dphi
        out[..., 1] = dpsi
        return out

    def diffusion(t, Q):
        Q = np.asarray(Q, dtype=float)
        out = np.zeros(Q.shape + (2,))
        out[..., 0, 0] = p.sigma * p.J_phi**-0.5
        out[..., 1, 1] = p.sigma * eta(p, Q[..., 0]) ** -0.5
        return out

    def valid(Q):
        phi = np.asarray(Q)[..., 0]
        return (eps(p, phi) >= EPS_TOL) & (eta(p, phi) > 0)

    return SDEProblem(2, drift, diffusion, 2, Calculus.STRATONOVICH, valid=valid)


# -- mean reconstruction --------------------------------------------------------

def vertical_velocity(p: SnakeboardParams, q) -> np.ndarray:
    """se(2) vector A(sigma u_3) = sigma eps^-1/2 (a + y c, b - x c, c)."""
    q = np.asarray(q, dtype=float)
    a, b, c = abc(p, q)
    k = p.sigma / np.sqrt(eps(p, q[..., PHI]))
    return np.stack([k * (a + q[..., Y] * c), k * (b - q[..., X] * c), k * c], axis=-1)


def reconstruction_rhs(p: SnakeboardParams):
    """Left-trivialized velocity 1/2 a a of E[g] (broadcasts over paths)."""

    def rhs(t, xh):
        A = hat(vertical_velocity(p, xh))
        return 0.5 * A @ A

    return rhs


def mean_translation_rate(p: SnakeboardParams, q, gamma) -> np.ndarray:
    """Closed-form (a_t', b_t') of E[g] at unit rotation-block scale."""
    q = np.asarray(q, dtype=float)
    a, b, c = abc(p, q)
    k = p.sigma**2 * c / (2 * eps(p, q[..., PHI]))
    u, v = a + q[..., Y] * c, b - q[..., X] * c
    return np.stack([k * (-u * np.sin(gamma) - v * np.cos(gamma)),
                     k * (u * np.cos(gamma) - v * np.sin(gamma))], axis=-1)


@dataclass
class SnakeboardRun:
    times: np.ndarray
    z_mean: np.ndarray       # (N+1, 5), NaN where no path survives
    z_samples: np.ndarray    # (S, N+1, 5)
    deterministic: np.ndarray
    survivors: np.ndarray    # paths alive at each time
    exploded: np.ndarray     # per path
    group_mean: np.ndarray   # (P, N+1, 3, 3)


def snakeboard_experiment(p: SnakeboardParams, grid: TimeGrid, master_seed: int, P: int,
                          q0=(0.0, 0.0, 0.0, 0.0, 0.5), samples: int = 3,
                          workers: int = 1) -> SnakeboardRun:
    """Mean filtered motion E[Z_t] with Z_t = E[g_t] . X^h_t.

    X^h is integrated in Ito form by Euler-Maruyama; per path, E[g] follows
    from RK4 on the same grid.  The deterministic reference is the sigma = 0
    run through the same code.
    """
    q0 = np.asarray(q0, dtype=float)
    check_regular(p, q0)
    ens = ensemble_run(horizontal_problem_ito(p), grid, q0, master_seed, P, workers=workers)
    X = ens.states
    rec = integrate_mean_reconstruction(reconstruction_rhs(p), X, grid)
    Z = act(rec.c, X, GROUP)
    ok = np.all(np.isfinite(Z), axis=-1)
    survivors = ok.sum(axis=0)
    with np.errstate(invalid="ignore"):
        z_mean = np.where(ok[..., None], Z, 0.0).sum(axis=0) / survivors[:, None]
    z_mean[survivors == 0] = np.nan
    det_p = SnakeboardParams(**{**p.__dict__, "sigma": 0.0})
    det = integrate(horizontal_problem_ito(det_p), grid, q0, np.zeros((grid.steps, 2))).states
    return SnakeboardRun(grid.times, z_mean, Z[:samples], det, survivors, ens.exploded, rec.c)
