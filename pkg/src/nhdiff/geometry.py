"""Chart-based Riemannian primitives evaluated by finite differences.

All field callbacks follow one convention: they accept an array of chart
points of shape ``(..., n)`` and broadcast over the leading axes, returning
``(..., n)`` for vector fields, ``(..., n, n)`` for metrics and
``(..., k, n)`` for stacks of one-forms.  Functions that only work point by
point can be adapted with :func:`pointwise`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateInput, DimensionMismatch, NotSPD

FD_STEP = 1e-5
TWO_PI = 2.0 * np.pi

FieldFn = Callable[[np.ndarray], np.ndarray]


def pointwise(fn: FieldFn) -> FieldFn:
    """Wrap a single-point callback so it broadcasts over leading axes."""

    def wrapped(q):
        q = np.asarray(q, dtype=float)
        if q.ndim == 1:
            return np.asarray(fn(q), dtype=float)
        flat = q.reshape(-1, q.shape[-1])
        out = np.stack([np.asarray(fn(p), dtype=float) for p in flat])
        return out.reshape(q.shape[:-1] + out.shape[1:])

    return wrapped


@dataclass(frozen=True)
class ConfigPoint:
    """Chart coordinates of a configuration, with S^1 flags.

    Coordinates are never wrapped during computation; :meth:`reduced` is for
    output only.
    """

    coords: np.ndarray
    periodic_mask: np.ndarray = None

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1)
        if c.size < 1 or not np.all(np.isfinite(c)):
            raise ValueError("coords must be a non-empty finite vector")
        mask = self.periodic_mask
        mask = np.zeros(c.size, bool) if mask is None else np.asarray(mask, bool).reshape(-1)
        if mask.size != c.size:
            raise DimensionMismatch("periodic_mask length differs from coords")
        object.__setattr__(self, "coords", c)
        object.__setattr__(self, "periodic_mask", mask)

    @property
    def dim(self) -> int:
        return self.coords.size

    def reduced(self) -> np.ndarray:
        return reduce_angles(self.coords, self.periodic_mask)


def reduce_angles(coords, periodic_mask) -> np.ndarray:
    """Map periodic coordinates into [0, 2pi); other coordinates untouched."""
    out = np.array(coords, dtype=float, copy=True)
    mask = np.asarray(periodic_mask, bool)
    out[..., mask] = np.mod(out[..., mask], TWO_PI)
    return out


def as_coords(q) -> np.ndarray:
    if isinstance(q, ConfigPoint):
        return q.coords
    return np.asarray(q, dtype=float)


@dataclass(frozen=True)
class MetricField:
    """Riemannian metric given by a broadcasting callback q -> (n, n).

    ``christoffel_fn`` may supply analytic symbols ``G[i, j, k]``; it then
    takes precedence over finite differences.
    """

    dim: int
    eval: FieldFn
    christoffel_fn: Optional[FieldFn] = field(default=None, compare=False)

    def __call__(self, q):
        return np.asarray(self.eval(as_coords(q)), dtype=float)


@dataclass(frozen=True)
class Frame:
    base: np.ndarray
    columns: np.ndarray

    @property
    def k(self) -> int:
        return self.columns.shape[1]


def cholesky(metric: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(metric)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("metric is not positive definite") from exc


def inner(metric: np.ndarray, v: np.ndarray, w: np.ndarray) -> float:
    return float(v @ metric @ w)


def fd_jacobian(f: FieldFn, q, step: float = FD_STEP) -> np.ndarray:
    """Central-difference derivative of ``f`` at ``q``.

    Returns an array of shape ``f(q).shape + (n,)`` whose last axis is the
    differentiation direction.
    """
    q = as_coords(q)
    if step <= 0:
        raise ValueError("fd_step must be positive")
    n = q.size
    offsets = step * np.eye(n)
    pts = np.concatenate([q + offsets, q - offsets])
    vals = np.asarray(f(pts), dtype=float)
    diff = (vals[:n] - vals[n:]) / (2.0 * step)
    return np.moveaxis(diff, 0, -1)


def directional_derivative(f: FieldFn, q, v, step: float = FD_STEP) -> np.ndarray:
    """(v . d) f at q, with a single symmetric stencil along v."""
    q = as_coords(q)
    v = np.asarray(v, dtype=float)
    vals = np.asarray(f(np.stack([q + step * v, q - step * v])), dtype=float)
    return (vals[0] - vals[1]) / (2.0 * step)


def orthonormalize(vectors, metric, order=None) -> np.ndarray:
    """Classical Gram-Schmidt of the columns of ``vectors`` in the metric.

    Each column is orthogonalized twice against its predecessors.  ``order``
    optionally fixes the sequence in which columns are processed; the output
    keeps the input column positions.
    """
    V = np.array(vectors, dtype=float, ndmin=2)
    if V.ndim != 2:
        raise DimensionMismatch("vectors must be an (n, k) array")
    g = np.asarray(metric, dtype=float)
    n, k = V.shape
    if g.shape != (n, n):
        raise DimensionMismatch(f"metric shape {g.shape} does not match n={n}")
    cholesky(g)
    gram = V.T @ g @ V
    if k and np.linalg.cond(gram) > 1e12:
        raise DegenerateInput("input vectors are numerically dependent")
    idx = list(range(k)) if order is None else list(order)
    if sorted(idx) != list(range(k)):
        raise ValueError("order must be a permutation of the columns")
    out = np.zeros_like(V)
    done = []
    for j in idx:
        w = V[:, j].copy()
        for _ in range(2):
            for i in done:
                w -= (out[:, i] @ g @ w) * out[:, i]
        nrm2 = w @ g @ w
        if nrm2 <= 0:
            raise DegenerateInput("input vectors are numerically dependent")
        out[:, j] = w / np.sqrt(nrm2)
        done.append(j)
    return out


def project_onto_distribution(q, v, dist_frame, metric) -> np.ndarray:
    """Metric-orthogonal projection of ``v`` onto the span of a frame.

    ``dist_frame`` is a :class:`Frame` or an ``(n, r)`` array whose columns
    are orthonormal for ``metric`` (the metric matrix at ``q``).
    """
    U = dist_frame.columns if isinstance(dist_frame, Frame) else np.asarray(dist_frame, float)
    v = np.asarray(v, dtype=float)
    g = np.asarray(metric, dtype=float)
    n = as_coords(q).size
    if v.shape[-1] != n or U.shape[0] != n or g.shape != (n, n):
        raise DimensionMismatch("projection inputs have inconsistent dimensions")
    return (v @ g @ U) @ U.T


def christoffel(metric: MetricField, q, fd_step: float = FD_STEP) -> np.ndarray:
    """Levi-Civita symbols ``G[i, j, k]`` (upper index first) at q."""
    q = as_coords(q)
    if metric.christoffel_fn is not None:
        return np.asarray(metric.christoffel_fn(q), dtype=float)
    g = metric(q)
    cholesky(g)
    # dg[l, j, k] = d_k g_lj
    dg = fd_jacobian(metric.eval, q, fd_step)
    lower = 0.5 * (dg + np.swapaxes(dg, 1, 2) - np.transpose(dg, (2, 0, 1)))
    # lower[l, j, k] = 1/2 (d_k g_lj + d_j g_lk - d_l g_jk)
    return np.linalg.solve(g, lower.reshape(g.shape[0], -1)).reshape(lower.shape)


def christoffel_batch(metric: MetricField, Q, fd_step: float = FD_STEP) -> np.ndarray:
    """Christoffel symbols at every point of ``Q`` (..., n) -> (..., n, n, n)."""
    Q = as_coords(Q)
    if metric.christoffel_fn is not None:
        return np.asarray(metric.christoffel_fn(Q), dtype=float)
    n = Q.shape[-1]
    offsets = fd_step * np.eye(n).reshape((n,) + (1,) * (Q.ndim - 1) + (n,))
    plus = np.asarray(metric.eval(Q + offsets), dtype=float)
    minus = np.asarray(metric.eval(Q - offsets), dtype=float)
    # dg[..., l, j, k] = d_k g_lj
    dg = np.moveaxis((plus - minus) / (2.0 * fd_step), 0, -1)
    lower = 0.5 * (dg + np.swapaxes(dg, -1, -2) - np.moveaxis(dg, -1, -3))
    g = metric(Q)
    flat = lower.reshape(lower.shape[:-3] + (n, n * n))
    return np.linalg.solve(g, flat).reshape(lower.shape)


def covariant_derivative(metric: MetricField, X: FieldFn, Y: FieldFn, q,
                         fd_step: float = FD_STEP) -> np.ndarray:
    """(nabla_X Y)(q) for the Levi-Civita connection of ``metric``."""
    q = as_coords(q)
    x = np.asarray(X(q), dtype=float)
    y = np.asarray(Y(q), dtype=float)
    G = christoffel(metric, q, fd_step)
    return directional_derivative(Y, q, x, fd_step) + np.einsum("ijk,j,k->i", G, x, y)


def lie_bracket(X: FieldFn, Y: FieldFn, q, fd_step: float = FD_STEP) -> np.ndarray:
    """[X, Y](q) = X(Y) - Y(X) by central differences."""
    q = as_coords(q)
    x = np.asarray(X(q), dtype=float)
    y = np.asarray(Y(q), dtype=float)
    return directional_derivative(Y, q, x, fd_step) - directional_derivative(X, q, y, fd_step)
