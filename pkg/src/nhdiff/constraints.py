"""Constraint distributions, adapted frames and constrained Brownian motion.

A distribution is the kernel of a stack of one-forms.  The constrained
Brownian motion of a metric and a distribution is the Stratonovich SDE

    dq = -(sigma^2 / 2) sum_a P(nabla_{u_a} u_a) dt + sigma sum_a u_a o dW^a

for any smooth orthonormal frame (u_a) of the distribution, where P is the
metric-orthogonal projection onto the distribution.  Its generator is
(sigma^2 / 2) sum_a Hess^nh(u_a, u_a) and does not depend on the frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotInDistribution, RankDrop
from .geometry import (FD_STEP, FieldFn, MetricField, as_coords, cholesky, christoffel_batch,
                       covariant_derivative, directional_derivative, fd_jacobian)

RANK_TOL = 1e-10


@dataclass(frozen=True)
class MechanicalSystem:
    """Metric plus constraint one-forms on a single global chart.

    ``constraint_forms(q)`` returns the ``(n - r, n)`` matrix whose rows are
    the constraint one-forms; the distribution is its kernel.
    ``frame_seed(q)`` optionally returns ``(n, r)`` spanning vectors used to
    build the orthonormal frame, orthonormalized in ``frame_order``.
    """

    dim: int
    metric: MetricField
    constraint_forms: FieldFn
    rank: int
    periodic_mask: np.ndarray = None
    frame_seed: Optional[FieldFn] = None
    frame_order: Optional[Sequence[int]] = None
    split: object = None
    name: str = "custom"
    params: object = field(default=None, compare=False)

    def __post_init__(self):
        mask = self.periodic_mask
        mask = np.zeros(self.dim, bool) if mask is None else np.asarray(mask, bool)
        object.__setattr__(self, "periodic_mask", mask)
        if not 0 < self.rank <= self.dim:
            raise ValueError("rank must lie in 1..dim")

    def forms(self, q) -> np.ndarray:
        q = as_coords(q)
        k = self.dim - self.rank
        if k == 0:
            return np.zeros(q.shape[:-1] + (0, self.dim))
        return np.asarray(self.constraint_forms(q), dtype=float)


def unconstrained(metric: MetricField, periodic_mask=None) -> MechanicalSystem:
    n = metric.dim
    return MechanicalSystem(n, metric, lambda q: np.zeros(np.shape(q)[:-1] + (0, n)),
                            n, periodic_mask)


@dataclass(frozen=True)
class AdaptedFrame:
    base: np.ndarray
    tangent_cols: np.ndarray
    normal_cols: np.ndarray


@dataclass(frozen=True)
class CBMFields:
    """Drift and diffusion of constrained Brownian motion.

    ``frame(q)`` returns the unscaled orthonormal frame of the distribution
    with shape ``(..., n, r)``; diffusion fields are ``sigma`` times its
    columns.
    """

    system: MechanicalSystem
    sigma: float
    frame: FieldFn
    drift_field: FieldFn

    def diffusion(self, q) -> np.ndarray:
        return self.sigma * self.frame(q)

    @property
    def diffusion_fields(self) -> list:
        r = self.system.rank
        return [(lambda q, a=a: self.sigma * self.frame(q)[..., :, a]) for a in range(r)]


# -- batch linear algebra ---------------------------------------------------

def gram_schmidt_batch(V, G, order=None) -> np.ndarray:
    """Twice-iterated classical Gram-Schmidt over leading batch axes."""
    V = np.asarray(V, dtype=float)
    k = V.shape[-1]
    idx = range(k) if order is None else order
    out = np.zeros_like(V)
    done = []
    for j in idx:
        w = V[..., :, j].copy()
        for _ in range(2):
            for i in done:
                ui = out[..., :, i]
                c = np.einsum("...i,...ij,...j->...", ui, G, w)
                w = w - c[..., None] * ui
        nrm = np.sqrt(np.einsum("...i,...ij,...j->...", w, G, w))
        out[..., :, j] = w / nrm[..., None]
        done.append(j)
    return out


def project_onto_kernel(C, G, v) -> np.ndarray:
    """Metric-orthogonal projection of ``v`` (..., n[, k]) onto ker C."""
    if C.shape[-2] == 0:
        return v
    Ginv_Ct = np.linalg.solve(G, np.swapaxes(C, -1, -2))
    S = C @ Ginv_Ct
    vec = v.ndim == C.ndim - 1
    vv = v[..., None] if vec else v
    out = vv - Ginv_Ct @ np.linalg.solve(S, C @ vv)
    return out[..., 0] if vec else out


def pivot_free_columns(C) -> np.ndarray:
    """Free coordinates of ker C from column-pivoted QR (sorted, deterministic)."""
    k, n = C.shape
    if k == 0:
        return np.arange(n)
    _, R, piv = scipy.linalg.qr(C, pivoting=True)
    d = np.abs(np.diag(R))
    if d.size < k or d[-1] <= RANK_TOL * max(d[0], 1.0):
        raise RankDrop(f"constraint matrix rank < {k}")
    return np.sort(piv[k:])


def kernel_basis(C, free) -> np.ndarray:
    """Kernel basis of C (..., k, n) parametrized by the given free columns."""
    n = C.shape[-1]
    free = np.asarray(free)
    dep = np.setdiff1d(np.arange(n), free)
    r = free.size
    B = np.zeros(C.shape[:-2] + (n, r))
    B[..., free, np.arange(r)] = 1.0
    if dep.size:
        B[..., dep, :] = -np.linalg.solve(C[..., :, dep], C[..., :, free])
    return B


def check_rank(C) -> None:
    k = C.shape[-2]
    if k == 0:
        return
    s = np.linalg.svd(C, compute_uv=False)
    if s[-1] <= RANK_TOL * max(s[0], 1.0):
        raise RankDrop(f"constraint matrix rank < {k}")


# -- frames -------------------------------------------------------------------

def frame_field(system: MechanicalSystem, q_ref=None, seed: Optional[FieldFn] = None,
                order=None) -> FieldFn:
    """Smooth orthonormal frame field of the distribution near ``q_ref``.

    Uses ``seed`` (or the system's frame seed); otherwise a kernel basis with
    free coordinates frozen at ``q_ref`` so that stencil points see the same
    parametrization.
    """
    seed = seed if seed is not None else system.frame_seed
    order = order if order is not None else system.frame_order
    free = None
    if seed is None:
        free = pivot_free_columns(system.forms(as_coords(q_ref)))

    def frame(q):
        q = as_coords(q)
        G = system.metric(q)
        C = system.forms(q)
        if seed is not None:
            V = project_onto_kernel(C, G, np.asarray(seed(q), dtype=float))
        else:
            V = kernel_basis(C, free)
        return gram_schmidt_batch(V, G, order)

    return frame


def adapted_frame(system: MechanicalSystem, q, seed_basis=None, order=None) -> AdaptedFrame:
    """Orthonormal frame of D and of its metric complement at q."""
    q = as_coords(q)
    C = system.forms(q)
    check_rank(C)
    G = system.metric(q)
    cholesky(G)
    if seed_basis is not None:
        seed_basis = np.asarray(seed_basis, dtype=float)
        if seed_basis.shape != (system.dim, system.rank):
            raise DimensionMismatch("seed_basis must be (n, r)")
        tangent = frame_field(system, q, seed=lambda _: seed_basis, order=order)(q)
    else:
        tangent = frame_field(system, q, order=order)(q)
    if C.shape[0]:
        normal = gram_schmidt_batch(np.linalg.solve(G, C.T), G)
    else:
        normal = np.zeros((system.dim, 0))
    return AdaptedFrame(q, tangent, normal)


def projector(system: MechanicalSystem, q) -> np.ndarray:
    """Matrix of the orthogonal projection onto D at q."""
    q = as_coords(q)
    return project_onto_kernel(system.forms(q), system.metric(q), np.eye(system.dim))


def nh_covariant(system: MechanicalSystem, X: FieldFn, Y: FieldFn, q,
                 fd_step: float = FD_STEP, tol: float = 1e-8) -> np.ndarray:
    """Non-holonomic covariant derivative P(nabla_X Y) for Y tangent to D."""
    q = as_coords(q)
    y = np.asarray(Y(q), dtype=float)
    C = system.forms(q)
    if C.shape[0] and np.max(np.abs(C @ y)) > tol * max(1.0, np.max(np.abs(y))):
        raise NotInDistribution("Y(q) is not in the constraint distribution")
    return projector(system, q) @ covariant_derivative(system.metric, X, Y, q, fd_step)


def frame_acceleration(system: MechanicalSystem, frame: FieldFn, q,
                       fd_step: float = FD_STEP) -> np.ndarray:
    """sum_a P(nabla_{u_a} u_a)(q) for the frame field ``frame``.

    ``q`` may carry leading batch axes when ``frame`` broadcasts.
    """
    q = as_coords(q)
    if q.ndim > 1:
        return _frame_acceleration_batch(system, frame, q, fd_step)
    U = frame(q)
    total = np.zeros(system.dim)
    for a in range(U.shape[1]):
        ua = lambda p, a=a: frame(p)[..., :, a]
        total += covariant_derivative(system.metric, ua, ua, q, fd_step)
    return projector(system, q) @ total


def _frame_acceleration_batch(system, frame, Q, fd_step):
    U = frame(Q)
    Gam = christoffel_batch(system.metric, Q, fd_step)
    total = np.einsum("...ijk,...ja,...ka->...i", Gam, U, U)
    for a in range(U.shape[-1]):
        ua = U[..., :, a]
        du = frame(Q + fd_step * ua)[..., :, a] - frame(Q - fd_step * ua)[..., :, a]
        total = total + du / (2.0 * fd_step)
    C = system.forms(Q)
    G = system.metric(Q)
    return project_onto_kernel(C, G, total)


def cbm_fields(system: MechanicalSystem, sigma: float, fd_step: float = FD_STEP) -> CBMFields:
    """Assemble the Stratonovich fields of constrained Brownian motion."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    ref = None
    if system.frame_seed is None:
        # free columns must be re-chosen at each evaluation point
        def frame(q):
            q = as_coords(q)
            if q.ndim == 1:
                return frame_field(system, q)(q)
            return np.stack([frame_field(system, p)(p) for p in q.reshape(-1, q.shape[-1])]
                            ).reshape(q.shape[:-1] + (system.dim, system.rank))
    else:
        frame = frame_field(system, ref)

    def drift(q):
        q = as_coords(q)
        if q.ndim == 1 or system.frame_seed is not None:
            f = frame if system.frame_seed is not None else frame_field(system, q)
            return -0.5 * sigma**2 * frame_acceleration(system, f, q, fd_step)
        flat = q.reshape(-1, q.shape[-1])
        return np.stack([drift(p) for p in flat]).reshape(q.shape)

    return CBMFields(system, float(sigma), frame, drift)


def martingale_defect(system: MechanicalSystem, sigma: float, q,
                      fields: Optional[CBMFields] = None, fd_step: float = FD_STEP) -> float:
    """Metric norm of drift + (sigma^2/2) sum_a nabla^nh_{u_a} u_a at q.

    Zero for correctly assembled fields: the process has no drift relative
    to the non-holonomic connection.
    """
    q = as_coords(q)
    fields = fields if fields is not None else cbm_fields(system, sigma, fd_step)
    frame = fields.frame
    if system.frame_seed is None:
        frame = frame_field(system, q)
    U = frame(q)
    acc = np.zeros(system.dim)
    for a in range(U.shape[1]):
        ua = lambda p, a=a: frame(p)[..., :, a]
        acc += nh_covariant(system, ua, ua, q, fd_step)
    d = np.asarray(fields.drift_field(q)) + 0.5 * fields.sigma**2 * acc
    return float(np.sqrt(d @ system.metric(q) @ d))


def generator_apply(drift: FieldFn, diffusion: FieldFn, f: Callable, q,
                    step: float = 1e-4) -> float:
    """Stratonovich generator drift.f + 1/2 sum_a X_a(X_a f) at q by FD.

    ``diffusion(q)`` returns the (n, k) matrix of fields X_a.
    """
    q = as_coords(q)

    def grad(p):
        return fd_jacobian(lambda s: np.asarray([f(x) for x in s]), p, step)

    val = float(np.asarray(drift(q)) @ grad(q))
    X = np.asarray(diffusion(q))
    for a in range(X.shape[1]):
        xa = X[:, a]
        Xf = lambda pts, a=a: np.array([diffusion(p)[:, a] @ grad(p) for p in pts])
        val += 0.5 * directional_derivative(Xf, q, xa, step)
    return val


def nh_generator_apply(system: MechanicalSystem, sigma: float, f: Callable, q,
                       frame: Optional[FieldFn] = None, step: float = 1e-4) -> float:
    """(sigma^2/2) sum_a [u_a(u_a f) - (P nabla_{u_a} u_a) f] evaluated by FD."""
    q = as_coords(q)
    frame = frame if frame is not None else frame_field(system, q)

    def grad(p):
        return fd_jacobian(lambda s: np.asarray([f(x) for x in s]), p, step)

    acc = frame_acceleration(system, frame, q, step)
    val = -float(acc @ grad(q))
    U = frame(q)
    for a in range(U.shape[1]):
        uf = lambda pts, a=a: np.array([frame(p)[:, a] @ grad(p) for p in pts])
        val += directional_derivative(uf, q, U[:, a], step)
    return 0.5 * sigma**2 * val
