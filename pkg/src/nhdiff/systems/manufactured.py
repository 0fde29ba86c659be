"""Manufactured drift forms on the flat 2-torus for exercising the measure test.

The bundle is T^2 x R with the flat metric and connection dz, so the reduced
metric is the identity and b equals beta.  Each factory returns a
:class:`CustomCase` usable from the ``custom`` system of the command line.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..chaplygin import ChaplyginSplit
from ..geometry import MetricField


@dataclass(frozen=True)
class CustomCase:
    split: ChaplyginSplit
    beta_fn: Optional[Callable] = None
    bounds: Optional[list] = None
    potential: Optional[Callable] = None


def flat_torus_split() -> ChaplyginSplit:
    mf = MetricField(3, lambda q: np.broadcast_to(np.eye(3), np.shape(q)[:-1] + (3, 3)).copy())

    def conn(q):
        A = np.zeros(np.shape(q)[:-1] + (1, 3))
        A[..., 0, 2] = 1.0
        return A

    def gens(q):
        out = np.zeros(np.shape(q)[:-1] + (1, 3))
        out[..., 0, 2] = 1.0
        return out

    return ChaplyginSplit(mf, [0, 1], [2], conn, gens)


def potential_F(x):
    x = np.asarray(x, dtype=float)
    return np.sin(x[..., 0]) * np.cos(x[..., 1]) + 0.3 * np.sin(x[..., 1])


def _dF(x):
    x = np.asarray(x, dtype=float)
    return np.stack([np.cos(x[..., 0]) * np.cos(x[..., 1]),
                     -np.sin(x[..., 0]) * np.sin(x[..., 1]) + 0.3 * np.cos(x[..., 1])], axis=-1)


def exact_form() -> CustomCase:
    """beta = dF for a smooth periodic F."""
    return CustomCase(flat_torus_split(), _dF, potential=potential_F)


def closed_form_with_period() -> CustomCase:
    """beta = dF + 0.5 dx1: closed, with a non-zero period on the x1-loop."""
    return CustomCase(flat_torus_split(), lambda x: _dF(x) + np.array([0.5, 0.0]))


def non_closed_form() -> CustomCase:
    """beta = sin(x2) dx1, whose exterior derivative is -cos(x2) dx1 ^ dx2."""

    def beta(x):
        x = np.asarray(x, dtype=float)
        return np.stack([np.sin(x[..., 1]), np.zeros(x.shape[:-1])], axis=-1)

    return CustomCase(flat_torus_split(), beta)
