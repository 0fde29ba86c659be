"""Chaplygin reduction: lifts, reduced metric, curvature and the drift form.

For a principal connection A whose kernel is the constraint distribution,
the reduced diffusion on the shape space has generator 1/2 Laplacian + 1/2 b
with b the metric dual of the one-form

    beta(x)(v) = sum_i < J(hl u_i), Curv(hl v, hl u_i) >

over an orthonormal frame (u_i) of the reduced metric.  A smooth preserved
measure exists iff beta is exact; on a torus that means closed with zero
periods, and then exp(F) with dF = beta is its density.
"""
from __future__ import annotations

import enum
import io
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .constraints import gram_schmidt_batch
from .errors import GridTooCoarse, NotInvariant, RankDrop
from .geometry import FD_STEP, FieldFn, MetricField, as_coords, covariant_derivative

# Probe values for group coordinates when checking that reduced quantities
# do not depend on the lift.
_GROUP_PROBE = (0.7, -0.4, 1.3, 0.25, -1.1, 0.9)


@dataclass(frozen=True)
class ChaplyginSplit:
    """Shape/group split of a chart with a principal connection.

    ``connection_form(q)`` returns the ``(g, n)`` matrix of A; ``generators(q)``
    the ``(g, n)`` matrix whose rows are the fundamental fields of a Lie algebra
    basis.  Both broadcast over leading axes.
    """

    metric: MetricField
    shape_indices: Sequence[int]
    group_indices: Sequence[int]
    connection_form: FieldFn
    generators: FieldFn
    shape_periodic: Optional[Sequence[bool]] = None

    def __post_init__(self):
        object.__setattr__(self, "shape_indices", np.asarray(self.shape_indices, int))
        object.__setattr__(self, "group_indices", np.asarray(self.group_indices, int))
        per = self.shape_periodic
        per = np.ones(self.m, bool) if per is None else np.asarray(per, bool)
        object.__setattr__(self, "shape_periodic", per)

    @property
    def n(self) -> int:
        return self.metric.dim

    @property
    def m(self) -> int:
        return self.shape_indices.size

    @property
    def g(self) -> int:
        return self.group_indices.size

    def lift(self, x, group=None) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = np.zeros(x.shape[:-1] + (self.n,))
        q[..., self.shape_indices] = x
        if group is not None:
            q[..., self.group_indices] = group
        return q

    def shape_of(self, q) -> np.ndarray:
        return as_coords(q)[..., self.shape_indices]

    def generator(self, xi) -> FieldFn:
        xi = np.asarray(xi, dtype=float)
        return lambda q: np.einsum("k,...kn->...n", xi, self.generators(as_coords(q)))


# -- lifts and metric -------------------------------------------------------

def lift_matrix(split: ChaplyginSplit, q) -> np.ndarray:
    """Columns are the horizontal lifts of the shape coordinate vectors."""
    q = as_coords(q)
    A = np.asarray(split.connection_form(q), dtype=float)
    Ag = A[..., :, split.group_indices]
    As = A[..., :, split.shape_indices]
    try:
        wg = -np.linalg.solve(Ag, As)
    except np.linalg.LinAlgError as exc:
        raise RankDrop("connection form is singular on the group directions") from exc
    H = np.zeros(q.shape[:-1] + (split.n, split.m))
    H[..., split.shape_indices, np.arange(split.m)] = 1.0
    H[..., split.group_indices, :] = wg
    return H


def horizontal_lift(split: ChaplyginSplit, q, v_shape) -> np.ndarray:
    """Unique w in ker A with shape components ``v_shape``."""
    return np.einsum("...nm,...m->...n", lift_matrix(split, q), np.asarray(v_shape, float))


def lifted_field(split: ChaplyginSplit, shape_field: Callable) -> FieldFn:
    """Horizontal lift of a vector field on the shape space to Q."""
    return lambda q: horizontal_lift(split, q, shape_field(split.shape_of(q)))


def _reduced_metric_at(split, q) -> np.ndarray:
    H = lift_matrix(split, q)
    G = split.metric(q)
    return np.swapaxes(H, -1, -2) @ G @ H


def reduced_metric(split: ChaplyginSplit, x, group=None, check: bool = True,
                   tol: float = 1e-9) -> np.ndarray:
    """Reduced metric mu0(x) = mu(hl d_a, hl d_b) at a lift of x."""
    x = np.asarray(x, dtype=float)
    g0 = _reduced_metric_at(split, split.lift(x, group))
    if check:
        probe = np.resize(np.asarray(_GROUP_PROBE), split.g)
        g1 = _reduced_metric_at(split, split.lift(x, probe))
        if np.max(np.abs(g1 - g0)) > tol * max(1.0, np.max(np.abs(g0))):
            raise NotInvariant("reduced metric depends on the group coordinates")
    return g0


def reduced_metric_field(split: ChaplyginSplit) -> MetricField:
    return MetricField(split.m, lambda x: _reduced_metric_at(split, split.lift(x)))


def shape_frame(split: ChaplyginSplit, x) -> np.ndarray:
    """Gram-Schmidt of the coordinate vectors over mu0, in index order."""
    G0 = _reduced_metric_at(split, split.lift(np.asarray(x, float)))
    eye = np.broadcast_to(np.eye(split.m), G0.shape)
    return gram_schmidt_batch(eye, G0)


# -- momentum and curvature ------------------------------------------------

def momentum(split: ChaplyginSplit, q, v) -> np.ndarray:
    """J(v) as a vector of pairings with the Lie algebra basis."""
    q = as_coords(q)
    return np.einsum("...kn,...nj,...j->...k", split.generators(q), split.metric(q),
                     np.asarray(v, float))


def momentum_pairing(split: ChaplyginSplit, q, v, xi) -> float:
    """<J(v), xi> = mu(v, xi_Q(q))."""
    return float(np.asarray(xi, float) @ momentum(split, q, v))


def curvature_matrix(split: ChaplyginSplit, q, fd_step: float = FD_STEP) -> np.ndarray:
    """K[..., a, b, :] = Curv(hl d_a, hl d_b) = -A([hl d_a, hl d_b]).

    Only a < b is differentiated; the rest is filled by antisymmetry.
    """
    q = as_coords(q)
    m = split.m
    H = lift_matrix(split, q)
    A = np.asarray(split.connection_form(q), dtype=float)
    K = np.zeros(q.shape[:-1] + (m, m, split.g))
    h = fd_step
    for a in range(m):
        for b in range(a + 1, m):
            ha, hb = H[..., :, a], H[..., :, b]
            # [X, Y] = dY.X - dX.Y along symmetric stencils
            dY = (lift_matrix(split, q + h * ha)[..., :, b]
                  - lift_matrix(split, q - h * ha)[..., :, b]) / (2 * h)
            dX = (lift_matrix(split, q + h * hb)[..., :, a]
                  - lift_matrix(split, q - h * hb)[..., :, a]) / (2 * h)
            val = -np.einsum("...kn,...n->...k", A, dY - dX)
            K[..., a, b, :] = val
            K[..., b, a, :] = -val
    return K


def curvature(split: ChaplyginSplit, q, X, Y, fd_step: float = FD_STEP) -> np.ndarray:
    """Curv^A(X, Y) at q for tangent vectors X, Y (horizontal parts used)."""
    K = curvature_matrix(split, q, fd_step)
    xs = split.shape_of(np.asarray(X, float))
    ys = split.shape_of(np.asarray(Y, float))
    return np.einsum("...a,...b,...abk->...k", xs, ys, K)


# -- drift one-form ------------------------------------------------------------

def beta_at(split: ChaplyginSplit, x, group=None, frame=None,
            fd_step: float = FD_STEP) -> np.ndarray:
    """Components of beta in shape coordinates at x (broadcasts over x).

    ``frame`` optionally supplies a mu0-orthonormal (m, m) frame at x.
    """
    x = np.asarray(x, dtype=float)
    q = split.lift(x, group)
    H = lift_matrix(split, q)
    K = curvature_matrix(split, q, fd_step)
    U = shape_frame(split, x) if frame is None else np.asarray(frame, float)
    # J of the lifted frame vectors: (..., g, m)
    J = np.einsum("...kn,...nj,...ji,...ia->...ka", split.generators(q), split.metric(q), H, U)
    # beta_j = sum_i < J(hl u_i), Curv(d_j, u_i) >
    return np.einsum("...ki,...jbk,...bi->...j", J, K, U)


def beta_dual(split: ChaplyginSplit, x, fd_step: float = FD_STEP) -> np.ndarray:
    """beta = mu0 b with b = sum_a (nabla^{mu0}_{u_a} u_a - nabla^M_{u_a} u_a).

    Uses only Levi-Civita connections and the constraint projection; shares
    no code with the curvature route of :func:`beta_at`.
    """
    x = np.asarray(x, dtype=float)
    q = split.lift(x)
    mu0 = reduced_metric_field(split)
    b = np.zeros(split.m)
    G = split.metric(q)
    H = lift_matrix(split, q)
    # orthogonal projection onto D = span(H)
    P = H @ np.linalg.solve(H.T @ G @ H, H.T @ G)
    for a in range(split.m):
        ua = lambda y, a=a: shape_frame(split, y)[..., :, a]
        hua = lifted_field(split, ua)
        b += covariant_derivative(mu0, ua, ua, x, fd_step)
        nabla = P @ covariant_derivative(split.metric, hua, hua, q, fd_step)
        b -= nabla[split.shape_indices]
    return mu0(x) @ b


def drift_b(split: ChaplyginSplit, x, fd_step: float = FD_STEP) -> np.ndarray:
    """Drift vector b = mu0^{-1} beta at x."""
    x = np.asarray(x, dtype=float)
    G0 = _reduced_metric_at(split, split.lift(x))
    beta = beta_at(split, x, fd_step=fd_step)
    return np.linalg.solve(G0, beta[..., None])[..., 0]


# -- preserved measure ---------------------------------------------------------

class Verdict(enum.Enum):
    EXACT = "EXACT"
    CLOSED_NOT_EXACT = "CLOSED_NOT_EXACT"
    NOT_CLOSED = "NOT_CLOSED"


@dataclass
class DriftReport:
    axes: list
    beta_values: np.ndarray
    b_values: np.ndarray
    closedness_residual: np.ndarray
    period_integrals: dict = field(default_factory=dict)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, len(self.axes))


@dataclass
class MeasureReport(DriftReport):
    verdict: Verdict = Verdict.NOT_CLOSED
    potential: Optional[np.ndarray] = None
    closed_tol: float = 0.0
    period_tol: float = 0.0

    @property
    def density(self) -> Optional[np.ndarray]:
        return None if self.potential is None else np.exp(self.potential)

    def summary(self) -> str:
        lines = [f"verdict: {self.verdict.value}"]
        if self.verdict is Verdict.EXACT:
            span = float(np.ptp(self.potential)) if self.potential is not None else 0.0
            kind = "N=const" if span < 1e-9 else "N=exp(F)"
            lines[0] += f", {kind}: smooth preserved measure; diffusion time-reversible"
        elif self.verdict is Verdict.CLOSED_NOT_EXACT:
            lines[0] += ": no smooth preserved measure; diffusion not time-reversible"
        else:
            lines[0] += ": beta not closed; no smooth preserved measure"
        lines.append(f"max |dbeta|: {np.max(self.closedness_residual):.6e} (tol {self.closed_tol:.3e})")
        for name, val in self.period_integrals.items():
            lines.append(f"period {name}: {val:.17g}")
        return "\n".join(lines)

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        for line in self.summary().splitlines():
            buf.write(f"# {line}\n")
        m = len(self.axes)
        cols = ([f"x{i + 1}" for i in range(m)] + [f"beta_{i + 1}" for i in range(m)]
                + [f"b_{i + 1}" for i in range(m)] + ["dbeta_norm"])
        buf.write(",".join(cols) + "\n")
        pts = self.points()
        beta = self.beta_values.reshape(-1, m)
        b = self.b_values.reshape(-1, m)
        res = self.closedness_residual.reshape(-1)
        for row in np.column_stack([pts, beta, b, res]):
            buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
        return buf.getvalue()


def _grid_axes(split, resolution, bounds):
    axes = []
    for i in range(split.m):
        if split.shape_periodic[i]:
            axes.append(np.arange(resolution) * (2 * np.pi / resolution))
        else:
            lo, hi = bounds[i]
            axes.append(np.linspace(lo, hi, resolution))
    return axes


def _partial(values, axis, spacing, periodic, stride=1):
    """Central difference along one grid axis (periodic wrap if flagged)."""
    h = spacing * stride
    if periodic:
        return (np.roll(values, -stride, axis) - np.roll(values, stride, axis)) / (2 * h)
    return np.gradient(values, h, axis=axis)


def exterior_derivative_norm(beta, axes, periodic, stride=1) -> np.ndarray:
    """Pointwise norm of d(beta) from grid values beta[..., j]."""
    m = beta.shape[-1]
    sl = tuple(slice(None, None, stride) for _ in range(m))
    bv = beta[sl]
    tot = np.zeros(bv.shape[:-1])
    for i in range(m):
        for j in range(i + 1, m):
            hi = axes[i][1] - axes[i][0]
            hj = axes[j][1] - axes[j][0]
            d = (_partial(bv[..., j], i, hi, periodic[i], stride)
                 - _partial(bv[..., i], j, hj, periodic[j], stride))
            tot += d**2
    return np.sqrt(tot)


def _trapezoid_periodic(values, spacing):
    return float(np.sum(values) * spacing)


def _potential(beta, axes):
    """F on the grid from line integrals along axis-aligned paths from the origin."""
    m = beta.shape[-1]
    F = np.zeros(beta.shape[:-1])
    for i in range(m):
        # integrand depends on the coordinates already travelled, later ones at 0
        idx = tuple([slice(None)] * (i + 1) + [0] * (m - i - 1))
        piece = cumulative_simpson(beta[idx + (i,)], x=axes[i], axis=i, initial=0.0)
        F = F + piece.reshape(piece.shape + (1,) * (m - i - 1))
    return F


def measure_test(split: ChaplyginSplit, grid_resolution: int = 64, loops=None,
                 beta_fn: Optional[Callable] = None, bounds=None,
                 fd_step: float = FD_STEP, closed_tol: Optional[float] = None,
                 check_resolution: bool = True) -> MeasureReport:
    """Decide exactness of beta on a grid over the shape space.

    Periodic shape coordinates are sampled on [0, 2pi); ``loops`` names the
    coordinate axes whose generating loops are integrated (default: every
    periodic axis).  ``beta_fn`` overrides the beta pipeline, e.g. for
    manufactured forms.
    """
    m = split.m
    k = int(grid_resolution)
    if k < 4:
        raise ValueError("grid_resolution must be at least 4")
    if bounds is None and not np.all(split.shape_periodic):
        raise ValueError("bounds are required for non-periodic shape coordinates")
    axes = _grid_axes(split, k, bounds)
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    flat = mesh.reshape(-1, m)
    if beta_fn is None:
        beta = beta_at(split, flat, fd_step=fd_step)
    else:
        beta = np.asarray(beta_fn(flat), dtype=float)
    G0 = _reduced_metric_at(split, split.lift(flat))
    b = np.linalg.solve(G0, beta[..., None])[..., 0]
    beta = beta.reshape(mesh.shape)
    b = b.reshape(mesh.shape)
    periodic = list(split.shape_periodic)

    res = exterior_derivative_norm(beta, axes, periodic)
    scale = float(np.max(np.abs(beta)))
    if closed_tol is None:
        closed_tol = 1e-6 * (1.0 + scale)
    if check_resolution and m > 1 and k >= 8:
        coarse = exterior_derivative_norm(beta, axes, periodic, stride=2)
        fine = res[tuple(slice(None, None, 2) for _ in range(m))]
        big = max(np.max(fine), np.max(coarse))
        if big > closed_tol and abs(np.max(fine) - np.max(coarse)) > 0.5 * big:
            raise GridTooCoarse("d(beta) estimate changed by more than 50% between resolutions")
    closed = float(np.max(res)) <= closed_tol

    loops = [i for i in range(m) if periodic[i]] if loops is None else list(loops)
    periods = {}
    for i in loops:
        line = beta[tuple([0] * i + [slice(None)] + [0] * (m - i - 1)) + (i,)]
        periods[f"x{i + 1}-loop"] = _trapezoid_periodic(line, axes[i][1] - axes[i][0])
    period_tol = 1e-6 * 2 * np.pi * (1.0 + scale)

    potential = None
    if not closed:
        verdict = Verdict.NOT_CLOSED
    elif any(abs(p) > period_tol for p in periods.values()):
        verdict = Verdict.CLOSED_NOT_EXACT
    else:
        verdict = Verdict.EXACT
        potential = _potential(beta, axes)
    return MeasureReport(axes, beta, b, res, periods, verdict, potential, closed_tol, period_tol)
