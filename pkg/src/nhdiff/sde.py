"""Seeded Brownian paths and Stratonovich/Ito integrators for vector-field SDEs.

Problems are evaluated on batches of states: ``drift(t, Q)`` maps ``(P, n)`` to
``(P, n)`` and ``diffusion(t, Q)`` maps ``(P, n)`` to ``(P, n, k)``.

Randomness is counter based.  The normal draw for (seed, path, step,
component) is the inverse normal CDF of the Philox4x64 output keyed by
(seed, path) at counter position step * k + component, so a path's noise does
not depend on which other paths are simulated, or in which order.
"""
from __future__ import annotations

import enum
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtri

from .geometry import FD_STEP

CHUNK = 1024


class Calculus(enum.Enum):
    STRATONOVICH = "stratonovich"
    ITO = "ito"


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_final: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.t_final > self.t0:
            raise ValueError("t_final must exceed t0")

    @property
    def h(self) -> float:
        return (self.t_final - self.t0) / self.steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.steps + 1)

    def index_of(self, t: float) -> int:
        i = int(round((t - self.t0) / self.h))
        if not 0 <= i <= self.steps or abs(self.t0 + i * self.h - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a grid time")
        return i


@dataclass(frozen=True)
class SDEProblem:
    """dq = drift dt + diffusion dW in the stated calculus.

    ``valid(Q)`` may flag states where the fields are undefined (returns a
    boolean mask); such paths are stopped like explosions.
    """

    dim: int
    drift: Callable
    diffusion: Callable
    noise_dim: int
    calculus: Calculus = Calculus.STRATONOVICH
    valid: Optional[Callable] = None


@dataclass
class Path:
    grid: TimeGrid
    states: np.ndarray
    path_seed: tuple = None
    exploded: bool = False
    explosion_time: Optional[float] = None

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[: self.states.shape[0]]


@dataclass
class Ensemble:
    grid: TimeGrid
    states: np.ndarray  # (P, len(record_index), n); NaN after explosion
    record_index: np.ndarray
    master_seed: int
    exploded: np.ndarray
    explosion_step: np.ndarray  # -1 when the path survived

    @property
    def times(self) -> np.ndarray:
        return self.grid.times[self.record_index]

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def path(self, i: int) -> Path:
        alive = np.all(np.isfinite(self.states[i]), axis=-1)
        k = int(np.argmin(alive)) if not alive.all() else alive.size
        t = None if self.explosion_step[i] < 0 else float(self.grid.times[self.explosion_step[i]])
        return Path(self.grid, self.states[i, :k], substream(self.master_seed, i),
                    bool(self.exploded[i]), t)


def substream(master_seed: int, path_index: int) -> tuple:
    return (int(master_seed), int(path_index))


def _philox_normals(seed: int, path: int, count: int) -> np.ndarray:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, path], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def brownian_increments(seed: int, grid: TimeGrid, k: int, path: int = 0) -> np.ndarray:
    """(N, k) i.i.d. Normal(0, h) increments for substream (seed, path)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    z = _philox_normals(seed, path, grid.steps * k).reshape(grid.steps, k)
    return z * np.sqrt(grid.h)


def strat_to_ito_correction(problem: SDEProblem, t: float, q, fd_step: float = FD_STEP) -> np.ndarray:
    """1/2 sum_j (D X_j) X_j at q (broadcasts over leading axes)."""
    q = np.asarray(q, dtype=float)
    single = q.ndim == 1
    Q = q[None] if single else q
    X = problem.diffusion(t, Q)
    out = np.zeros_like(Q)
    for j in range(problem.noise_dim):
        v = X[..., j]
        plus = problem.diffusion(t, Q + fd_step * v)[..., j]
        minus = problem.diffusion(t, Q - fd_step * v)[..., j]
        out += (plus - minus) / (4.0 * fd_step)
    return out[0] if single else out


def to_ito(problem: SDEProblem, fd_step: float = FD_STEP) -> SDEProblem:
    """Ito problem with the same law as a Stratonovich one."""
    if problem.calculus is Calculus.ITO:
        return problem

    def drift(t, Q):
        return problem.drift(t, Q) + strat_to_ito_correction(problem, t, Q, fd_step)

    return replace(problem, drift=drift, calculus=Calculus.ITO)


def _integrate_batch(problem: SDEProblem, grid: TimeGrid, Q0: np.ndarray, dW: np.ndarray,
                     record_index: np.ndarray):
    P = Q0.shape[0]
    h = grid.h
    times = grid.times
    out = np.full((P, record_index.size, problem.dim), np.nan)
    rec_pos = {int(i): j for j, i in enumerate(record_index)}
    q = np.array(Q0, dtype=float)
    alive = np.ones(P, bool)
    boom = np.full(P, -1)
    if 0 in rec_pos:
        out[:, rec_pos[0]] = q
    heun = problem.calculus is Calculus.STRATONOVICH
    k = problem.noise_dim
    for n in range(grid.steps):
        t = times[n]
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        qa = q[idx]
        f0 = problem.drift(t, qa)
        if k:
            g0 = problem.diffusion(t, qa)
            dw = dW[idx, n]
            noise0 = np.einsum("pnk,pk->pn", g0, dw)
        else:
            noise0 = 0.0
        with np.errstate(all="ignore"):
            pred = qa + f0 * h + noise0
            if heun:
                f1 = problem.drift(times[n + 1], pred)
                noise1 = np.einsum("pnk,pk->pn", problem.diffusion(times[n + 1], pred), dw) if k else 0.0
                new = qa + 0.5 * (f0 + f1) * h + 0.5 * (noise0 + noise1)
            else:
                new = pred
        ok = np.all(np.isfinite(new), axis=1)
        if problem.valid is not None:
            ok &= np.asarray(problem.valid(np.where(ok[:, None], new, qa)), bool)
        bad = idx[~ok]
        alive[bad] = False
        boom[bad] = n + 1
        q[idx[ok]] = new[ok]
        q[bad] = np.nan
        if n + 1 in rec_pos:
            out[:, rec_pos[n + 1]] = q
    return out, ~alive, boom


def integrate(problem: SDEProblem, grid: TimeGrid, initial, increments=None,
              path_seed=None) -> Path:
    """Heun (Stratonovich) or Euler-Maruyama (Ito) on ``grid``.

    Stops at the first non-finite or invalid state and returns the finite
    prefix with ``exploded`` set.
    """
    q0 = np.asarray(initial, dtype=float).reshape(1, problem.dim)
    if problem.noise_dim:
        dW = np.asarray(increments, dtype=float)
        if dW.shape != (grid.steps, problem.noise_dim):
            raise ValueError(f"increments must have shape {(grid.steps, problem.noise_dim)}")
        dW = dW[None]
    else:
        dW = np.zeros((1, grid.steps, 0))
    rec = np.arange(grid.steps + 1)
    states, exploded, boom = _integrate_batch(problem, grid, q0, dW, rec)
    if exploded[0]:
        k = int(boom[0])
        return Path(grid, states[0, :k], path_seed, True, float(grid.times[k]))
    return Path(grid, states[0], path_seed)


def integrate_batch(problem: SDEProblem, grid: TimeGrid, initial, increments):
    """Integrate P paths with caller-supplied increments of shape (P, N, k).

    Returns ``(states, exploded)``; states after an explosion are NaN.
    """
    dW = np.asarray(increments, dtype=float)
    P = dW.shape[0]
    if dW.shape[1:] != (grid.steps, problem.noise_dim):
        raise ValueError(f"increments must have shape (P, {grid.steps}, {problem.noise_dim})")
    Q0 = np.broadcast_to(np.asarray(initial, dtype=float), (P, problem.dim))
    states, exploded, _ = _integrate_batch(problem, grid, Q0, dW, np.arange(grid.steps + 1))
    return states, exploded


def _record_index(grid: TimeGrid, record_stride: int = 1, record_times=None) -> np.ndarray:
    if record_times is not None:
        idx = sorted({0, *(grid.index_of(t) for t in record_times)})
        return np.asarray(idx)
    idx = np.arange(0, grid.steps + 1, record_stride)
    if idx[-1] != grid.steps:
        idx = np.append(idx, grid.steps)
    return idx


def ensemble_run(problem: SDEProblem, grid: TimeGrid, initial, master_seed: int, P: int,
                 record_stride: int = 1, record_times=None, workers: int = 1) -> Ensemble:
    """P independent paths; path i uses noise substream (master_seed, i).

    Paths are integrated in fixed blocks of ``CHUNK``; ``workers`` only changes
    how blocks are scheduled, never the numbers produced.
    """
    if P < 1:
        raise ValueError("P must be >= 1")
    q0 = np.asarray(initial, dtype=float).reshape(-1)
    rec = _record_index(grid, record_stride, record_times)
    k = problem.noise_dim

    def run_block(start):
        stop = min(start + CHUNK, P)
        if k:
            dW = np.stack([brownian_increments(master_seed, grid, k, i) for i in range(start, stop)])
        else:
            dW = np.zeros((stop - start, grid.steps, 0))
        Q0 = np.broadcast_to(q0, (stop - start, problem.dim))
        return _integrate_batch(problem, grid, Q0, dW, rec)

    starts = range(0, P, CHUNK)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            blocks = list(ex.map(run_block, starts))
    else:
        blocks = [run_block(s) for s in starts]
    states = np.concatenate([b[0] for b in blocks])
    exploded = np.concatenate([b[1] for b in blocks])
    boom = np.concatenate([b[2] for b in blocks])
    return Ensemble(grid, states, rec, int(master_seed), exploded, boom)


def ensemble_stats(ensemble: Ensemble, observable: Callable = None):
    """Mean and standard error of ``observable(states)`` at each recorded time.

    Paths that exploded are dropped from the times after their explosion.
    Returns ``(mean, stderr, count)``.
    """
    vals = ensemble.states if observable is None else observable(ensemble.states)
    vals = np.asarray(vals, dtype=float)
    if vals.ndim == 2:
        vals = vals[..., None]
    ok = np.all(np.isfinite(vals), axis=-1)
    count = ok.sum(axis=0)
    filled = np.where(ok[..., None], vals, 0.0)
    cnt = np.maximum(count, 1)[:, None]
    mean = filled.sum(axis=0) / cnt
    dev = np.where(ok[..., None], vals - mean, 0.0)
    var = (dev**2).sum(axis=0) / np.maximum(count - 1, 1)[:, None]
    stderr = np.sqrt(var) / np.sqrt(cnt)
    if observable is not None and np.ndim(observable(ensemble.states[:1, :1])) == 2:
        return mean[:, 0], stderr[:, 0], count
    return mean, stderr, count


# -- serialization ------------------------------------------------------------

def _fmt(v: float) -> str:
    return f"{v:.17g}"


def paths_csv(ensemble: Ensemble, header_lines=(), coord_names=None) -> str:
    n = ensemble.states.shape[-1]
    names = coord_names or [f"q{i + 1}" for i in range(n)]
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(",".join(["t", *names, "path_id", "exploded"]) + "\n")
    times = ensemble.times
    for i in range(ensemble.size):
        flag = int(ensemble.exploded[i])
        for j, t in enumerate(times):
            row = ensemble.states[i, j]
            if not np.all(np.isfinite(row)):
                break
            buf.write(",".join([_fmt(t), *map(_fmt, row), str(i), str(flag)]) + "\n")
    return buf.getvalue()


def table_csv(columns: dict, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    names = list(columns)
    buf.write(",".join(names) + "\n")
    cols = [np.asarray(columns[k]) for k in names]
    for row in zip(*cols):
        buf.write(",".join(_fmt(float(v)) if not isinstance(v, (np.integer, int)) else str(v)
                           for v in row) + "\n")
    return buf.getvalue()
