"""SE(2) arithmetic and mean reconstruction of the group part of a bundle diffusion.

Group elements are 3x3 homogeneous matrices.  The mean E[g_t] of the
reconstruction process solves the left-invariant ODE

    c' = c (b(t) + 1/2 sum_a a_a(t) a_a(t)),

with products taken in gl(3).  The quadratic term leaves SE(2) (it scales the
rotation block), so the mean is carried as a general 3x3 matrix; its angle
is read off as atan2(c10, c00) and its action on (x, y, theta) is the affine
action on (x, y) plus that angle.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonFinite
from .sde import TimeGrid


def hat(v) -> np.ndarray:
    """se(2) vector (v1, v2, omega) -> 3x3 matrix; broadcasts."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 1, 0] = v[..., 2]
    out[..., 0, 2] = v[..., 0]
    out[..., 1, 2] = v[..., 1]
    return out


def vee(M) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    return np.stack([M[..., 0, 2], M[..., 1, 2], M[..., 1, 0]], axis=-1)


@dataclass(frozen=True)
class SE2Element:
    """Planar rigid motion q -> R_angle q + translation."""

    translation: tuple = (0.0, 0.0)
    angle: float = 0.0

    @classmethod
    def identity(cls) -> "SE2Element":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "SE2Element":
        M = np.asarray(M, dtype=float)
        return cls((float(M[0, 2]), float(M[1, 2])), float(np.arctan2(M[1, 0], M[0, 0])))

    def matrix(self) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        a, b = self.translation
        return np.array([[c, -s, a], [s, c, b], [0.0, 0.0, 1.0]])

    def __matmul__(self, other: "SE2Element") -> "SE2Element":
        return SE2Element.from_matrix(self.matrix() @ other.matrix())

    def inverse(self) -> "SE2Element":
        return SE2Element.from_matrix(np.linalg.inv(self.matrix()))

    def act(self, q, group_indices=(0, 1, 2)) -> np.ndarray:
        return act(self.matrix(), q, group_indices)


def act(M, q, group_indices=(0, 1, 2)) -> np.ndarray:
    """Action of a homogeneous matrix on the (x, y, theta) slots of q.

    ``M`` may be (3, 3) or carry the same leading axes as ``q``.
    """
    q = np.array(q, dtype=float, copy=True)
    M = np.asarray(M, dtype=float)
    ix, iy, ith = group_indices
    x, y = q[..., ix].copy(), q[..., iy].copy()
    q[..., ix] = M[..., 0, 0] * x + M[..., 0, 1] * y + M[..., 0, 2]
    q[..., iy] = M[..., 1, 0] * x + M[..., 1, 1] * y + M[..., 1, 2]
    q[..., ith] = q[..., ith] + np.arctan2(M[..., 1, 0], M[..., 0, 0])
    return q


def mean_reconstruction_rhs(vertical_drift, vertical_fields, connection, t, c, xh) -> np.ndarray:
    """Left-trivialized velocity b + 1/2 sum a_a a_a of the mean E[g].

    ``connection(q, v)`` returns the se(2) vector of a tangent vector;
    ``vertical_drift(t, q)`` and ``vertical_fields(t, q)`` give v0 (n,) and the
    stacked fields v_a (n, k).  ``c`` is unused (the ODE is left-invariant)
    and kept for a uniform signature.
    """
    del c
    out = np.zeros((3, 3))
    if vertical_drift is not None:
        out += hat(connection(xh, vertical_drift(t, xh)))
    if vertical_fields is not None:
        V = np.asarray(vertical_fields(t, xh), dtype=float)
        for a in range(V.shape[-1]):
            A = hat(connection(xh, V[..., a]))
            out += 0.5 * A @ A
    return out


@dataclass
class ReconstructionState:
    times: np.ndarray
    c: np.ndarray  # ([P,] N+1, 3, 3) mean group matrices
    horizontal_path: np.ndarray

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.c[..., 1, 0], self.c[..., 0, 0])

    @property
    def translation(self) -> np.ndarray:
        return self.c[..., :2, 2]


def integrate_mean_reconstruction(rhs: Callable, horizontal_path, grid: TimeGrid,
                                  c0=None) -> ReconstructionState:
    """Classical RK4 for c' = c rhs(t, x^h_t) on the grid of ``horizontal_path``.

    ``horizontal_path`` is (N+1, n) or a batch (P, N+1, n); ``rhs(t, xh)``
    returns a 3x3 matrix per path.  At the half step the path is linearly
    interpolated between neighbouring grid states.  A single path raises
    NonFinite on overflow; in a batch, paths that stopped early carry NaN.
    """
    X = np.asarray(horizontal_path, dtype=float)
    batch = X.ndim == 3
    N = X.shape[-2] - 1
    if N != grid.steps:
        raise ValueError("horizontal path must be sampled on the grid")
    h = grid.h
    times = grid.times
    lead = X.shape[:-2]
    C = np.empty(lead + (N + 1, 3, 3))
    C[..., 0, :, :] = np.eye(3) if c0 is None else np.asarray(c0, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(N):
            c = C[..., n, :, :]
            t = times[n]
            x0, x1 = X[..., n, :], X[..., n + 1, :]
            r0 = rhs(t, x0)
            rm = rhs(t + 0.5 * h, 0.5 * (x0 + x1))
            r1 = rhs(t + h, x1)
            k1 = c @ r0
            k2 = (c + 0.5 * h * k1) @ rm
            k3 = (c + 0.5 * h * k2) @ rm
            k4 = (c + h * k3) @ r1
            C[..., n + 1, :, :] = c + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not batch and not np.all(np.isfinite(C[n + 1])):
                raise NonFinite(float(times[n + 1]), "mean reconstruction left double range")
    return ReconstructionState(times, C, X)


def filter_estimate(recon: ReconstructionState, horizontal_path=None,
                    group_indices=(2, 3, 4)) -> np.ndarray:
    """Z_t = E[g_t] . X^h_t; shape coordinates are left untouched."""
    X = recon.horizontal_path if horizontal_path is None else np.asarray(horizontal_path, float)
    if X.shape[:-1] != recon.c.shape[:-2]:
        raise ValueError("reconstruction and path lengths differ")
    return act(recon.c, X, group_indices)
