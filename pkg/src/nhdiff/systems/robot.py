"""Two-wheeled robot on Q = S^1 x S^1 x SE(2), coordinates (psi1, psi2, x, y, theta).

Sign convention: the robot moves forward when the wheel angles decrease.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson

from ..chaplygin import ChaplyginSplit
from ..constraints import MechanicalSystem
from ..geometry import MetricField

PSI1, PSI2, X, Y, TH = range(5)


@dataclass(frozen=True)
class RobotParams:
    m0: float = 1.0
    m_w: float = 0.25
    J_w: float = 0.1
    J_0: float = 0.5
    l: float = 0.2
    c: float = 0.1
    R: float = 0.3
    D1: float = 1.0
    D2: float = 1.0

    def __post_init__(self):
        for name in ("m0", "m_w", "J_w", "J_0", "c", "R"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.l < 0 or self.D1 < 0 or self.D2 < 0:
            raise ValueError("l, D1, D2 must be non-negative")

    @property
    def m(self) -> float:
        return self.m0 + 2 * self.m_w

    @property
    def xi_norm2(self) -> float:
        """mu(xi_1, xi_1) = mu(xi_2, xi_2)."""
        R, c = self.R, self.c
        return self.J_w + self.m * R**2 / 4 + self.J_0 * R**2 / (4 * c**2)

    @property
    def xi_cross(self) -> float:
        """mu(xi_1, xi_2)."""
        R, c = self.R, self.c
        return self.m * R**2 / 4 - self.J_0 * R**2 / (4 * c**2)


def metric(p: RobotParams, q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    th = q[..., TH]
    G = np.zeros(q.shape[:-1] + (5, 5))
    G[..., PSI1, PSI1] = p.J_w
    G[..., PSI2, PSI2] = p.J_w
    G[..., X, X] = p.m
    G[..., Y, Y] = p.m
    G[..., TH, TH] = p.J_0
    G[..., X, TH] = G[..., TH, X] = -p.m0 * p.l * np.sin(th)
    G[..., Y, TH] = G[..., TH, Y] = p.m0 * p.l * np.cos(th)
    return G


def connection_form(p: RobotParams, q) -> np.ndarray:
    """Rows are the x, y and rotation components of the connection."""
    q = np.asarray(q, dtype=float)
    x, y, th = q[..., X], q[..., Y], q[..., TH]
    R, c = p.R, p.c
    A = np.zeros(q.shape[:-1] + (3, 5))
    A[..., 0, PSI1] = R / 2 * np.cos(th) + y * R / (2 * c)
    A[..., 0, PSI2] = R / 2 * np.cos(th) - y * R / (2 * c)
    A[..., 0, X] = 1.0
    A[..., 0, TH] = y
    A[..., 1, PSI1] = R / 2 * np.sin(th) - x * R / (2 * c)
    A[..., 1, PSI2] = R / 2 * np.sin(th) + x * R / (2 * c)
    A[..., 1, Y] = 1.0
    A[..., 1, TH] = -x
    A[..., 2, PSI1] = R / (2 * c)
    A[..., 2, PSI2] = -R / (2 * c)
    A[..., 2, TH] = 1.0
    return A


def se2_generators(q) -> np.ndarray:
    """Fundamental fields of d/dx, d/dy and the rotation -y d_x + x d_y + d_theta."""
    q = np.asarray(q, dtype=float)
    out = np.zeros(q.shape[:-1] + (3, 5))
    out[..., 0, X] = 1.0
    out[..., 1, Y] = 1.0
    out[..., 2, X] = -q[..., Y]
    out[..., 2, Y] = q[..., X]
    out[..., 2, TH] = 1.0
    return out


def xi_fields(p: RobotParams, q) -> np.ndarray:
    """Columns xi_1, xi_2 spanning the constraint distribution."""
    q = np.asarray(q, dtype=float)
    th = q[..., TH]
    R, c = p.R, p.c
    out = np.zeros(q.shape[:-1] + (5, 2))
    out[..., PSI1, 0] = 1.0
    out[..., PSI2, 1] = 1.0
    for j, sgn in ((0, 1.0), (1, -1.0)):
        out[..., X, j] = -R / 2 * np.cos(th)
        out[..., Y, j] = -R / 2 * np.sin(th)
        out[..., TH, j] = -sgn * R / (2 * c)
    return out


def frame_coefficients(p: RobotParams) -> np.ndarray:
    """Constant (2, 2) matrix F with (u_1, u_2) = (xi_1, xi_2) F."""
    A, B = p.xi_norm2, p.xi_cross
    F = np.zeros((2, 2))
    F[0, 0] = A**-0.5
    k2 = (A - B**2 / A) ** -0.5
    F[0, 1] = -k2 * B / A
    F[1, 1] = k2
    return F


def frame(p: RobotParams, q) -> np.ndarray:
    """Lifted orthonormal frame (u_1^h, u_2^h) as (..., 5, 2)."""
    return xi_fields(p, q) @ frame_coefficients(p)


def robot_system(p: RobotParams) -> MechanicalSystem:
    mf = MetricField(5, lambda q: metric(p, q))
    split = ChaplyginSplit(mf, [PSI1, PSI2], [X, Y, TH],
                           lambda q: connection_form(p, q), se2_generators)
    return MechanicalSystem(5, mf, lambda q: connection_form(p, q), 2,
                            periodic_mask=np.array([1, 1, 0, 0, 1], bool),
                            frame_seed=lambda q: xi_fields(p, q), split=split,
                            name="robot", params=p)


def drift_scalar(p: RobotParams) -> float:
    """Magnitude l m0 R^3 / den of the reduced drift.

    With the robot moving forward as the wheel angles decrease, the drift
    vector is b = -drift_scalar (d_psi1 + d_psi2): the robot creeps towards
    its centre of mass.
    """
    m, R, c, Jw, J0 = p.m, p.R, p.c, p.J_w, p.J_0
    den = Jw * (4 * c**2 * Jw + 2 * m * c**2 * R**2 + 2 * J0 * R**2) + m * J0 * R**4
    return p.l * p.m0 * R**3 / den


def robot_drift_closed_form(p: RobotParams) -> np.ndarray:
    """Components of b on (d_psi1, d_psi2)."""
    s = -drift_scalar(p)
    return np.array([s, s])


def robot_mean_motion_ode(p: RobotParams, q) -> np.ndarray:
    """1/2 hl(b)(q): right-hand side of the mean-motion ODE."""
    s = -drift_scalar(p)
    xi = xi_fields(p, q)
    return 0.5 * s * (xi[..., 0] + xi[..., 1])


def cbm_drift(p: RobotParams, q, sigma: float = 1.0) -> np.ndarray:
    """Closed-form constrained-Brownian drift, sigma^2/2 hl(b)."""
    return sigma**2 * robot_mean_motion_ode(p, q)


def robot_mean_exact(p: RobotParams, q0, t) -> np.ndarray:
    """Exact E[q_t] of the zero-velocity constrained Brownian motion.

    theta is a driftless Brownian motion with variance rate ``nu``, so
    E[cos theta_s] = exp(-nu s / 2) cos theta_0 and likewise for sin.
    """
    q0 = np.asarray(q0, dtype=float)
    t = np.asarray(t, dtype=float)
    s = -drift_scalar(p)
    w = np.array([-1.0, 1.0]) * p.R / (2 * p.c)
    F = frame_coefficients(p)
    nu = float(np.sum((w @ F) ** 2))
    decay = t if nu == 0 else (2.0 / nu) * (1.0 - np.exp(-0.5 * nu * t))
    out = np.empty(t.shape + (5,))
    out[..., PSI1] = q0[PSI1] + 0.5 * s * t
    out[..., PSI2] = q0[PSI2] + 0.5 * s * t
    out[..., X] = q0[X] - 0.5 * s * p.R * np.cos(q0[TH]) * decay
    out[..., Y] = q0[Y] - 0.5 * s * p.R * np.sin(q0[TH]) * decay
    out[..., TH] = q0[TH]
    return out


# -- trajectory planning ----------------------------------------------------

@dataclass(frozen=True)
class RobotControl:
    """Circle-following control; speeds ramp up until t1 and brake until T."""

    rho: float = 1.0

    @property
    def t1(self) -> float:
        return float(np.sqrt(np.pi / 2))

    @property
    def T(self) -> float:
        return 1.5 * np.pi + self.t1

    def lam(self, t):
        t = np.asarray(t, dtype=float)
        t1, T = self.t1, self.T
        return np.where(t < t1, 2 * t, 2 * (t - T) / (t1 - T))

    def theta(self, t):
        t = np.asarray(t, dtype=float)
        t1, T = self.t1, self.T
        return np.where(t < t1, t**2 + np.pi / 2, (t - T) ** 2 / (t1 - T) + 2.5 * np.pi)


def kappa(p: RobotParams) -> float:
    return (p.D2 - p.D1) * p.R**2 / (8 * p.c)


@dataclass
class PlanResult:
    t: np.ndarray
    mean: np.ndarray
    nominal: np.ndarray
    accelerating: np.ndarray  # boolean mask, t < t1


def robot_plan_mean(p: RobotParams, control: RobotControl, steps: int = 10_000,
                    variant: str = "paper", t_final: float = None) -> PlanResult:
    """Mean planar path (E[x_t], E[y_t]) of the noisy controlled robot.

    variant ``"paper"`` weights the integrands by exp(kappa s), ``"paper-literal"``
    by exp(kappa t) outside the integral, and ``"kinematic"`` uses the exact
    theta law of the lifted wheel noise (decay exp(-nu s),
    nu = (D1 + D2) R^2 / (8 c^2)).  Paths start at (rho, 0); the nominal
    path is the kappa = 0 member of the same family.
    """
    if steps < 4 or steps % 2:
        raise ValueError("Simpson quadrature needs an even number of steps >= 4")
    T = control.T if t_final is None else float(t_final)
    if T < control.t1:
        raise ValueError("planning horizon must cover the acceleration phase")
    # lambda jumps at t1, so t1 is made a node and each phase integrated on its own
    t1 = control.t1
    n1 = min(max(2, 2 * round(steps * t1 / T / 2)), steps) if T > t1 else steps
    n2 = steps - n1
    ta = np.linspace(0.0, min(t1, T), n1 + 1)
    tb = np.linspace(t1, T, n2 + 1) if n2 else ta[-1:]
    t = np.concatenate([ta, tb[1:]])
    th = np.concatenate([control.theta(ta), control.theta(tb[1:])])
    lam_a = 2 * ta
    lam_b = control.lam(tb)
    lam = np.concatenate([lam_a, lam_b[1:]])
    rho, k = control.rho, kappa(p)

    def integrate_phases(f_a, f_b):
        out = cumulative_simpson(f_a, x=ta, initial=0.0)
        if n2:
            out = np.concatenate([out, out[-1] + cumulative_simpson(f_b, x=tb, initial=0.0)[1:]])
        return out

    def path(k, weight, outer=None):
        wa, wb = weight[: n1 + 1], weight[n1:]
        tha, thb = th[: n1 + 1], th[n1:]
        cols = []
        for lam_seg, th_seg, w in ((lam_a, tha, wa), (lam_b, thb, wb)):
            if variant == "kinematic":
                fx = k * np.sin(th_seg) + rho * lam_seg * np.cos(th_seg)
                fy = -k * np.cos(th_seg) + rho * lam_seg * np.sin(th_seg)
            else:
                fx = k * np.cos(th_seg) + rho * lam_seg * np.sin(th_seg)
                fy = -k * np.sin(th_seg) + rho * lam_seg * np.cos(th_seg)
            cols.append((w * fx, w * fy))
        ix = integrate_phases(cols[0][0], cols[1][0])
        iy = integrate_phases(cols[0][1], cols[1][1])
        if outer is not None:
            ix, iy = outer * ix, outer * iy
        return np.column_stack([rho + ix, iy])

    ones = np.ones_like(t)
    if variant == "paper":
        mean = path(k, np.exp(k * t))
    elif variant == "paper-literal":
        mean = path(k, ones, outer=np.exp(k * t))
    elif variant == "kinematic":
        nu = (p.D1 + p.D2) * p.R**2 / (8 * p.c**2)
        mean = path(k, np.exp(-nu * t))
    else:
        raise ValueError(f"unknown planning variant {variant!r}")
    nominal = path(0.0, ones)
    return PlanResult(t, mean, nominal, t < control.t1)


def controlled_drift(p: RobotParams, control: RobotControl, t, q) -> np.ndarray:
    """hl(u(t)) for the circle-following wheel input."""
    lam = control.lam(t)
    rho, c, R = control.rho, p.c, p.R
    xi = xi_fields(p, q)
    return -lam * ((rho + c) / R * xi[..., 0] + (rho - c) / R * xi[..., 1])


def controlled_diffusion(p: RobotParams, q) -> np.ndarray:
    """Lift of independent wheel noise: sqrt(D_i) xi_i."""
    return xi_fields(p, q) * np.sqrt([p.D1, p.D2])
