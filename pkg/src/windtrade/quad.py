"""Quadrature rules for expectations over a standard normal variable."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

# integration range in z; the normal tail beyond this is below 1e-19
Z_MAX = 9.0


@lru_cache(maxsize=None)
def normal_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Hermite nodes/weights for ``E[h(Z)]``, ``Z ~ N(0, 1)``."""
    z, w = hermegauss(n)
    w = w / np.sqrt(2.0 * np.pi)
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


@lru_cache(maxsize=None)
def _legendre(n: int):
    return leggauss(n)


def piecewise_normal_rule(breaks, n_panel: int = 12, panel_width: float = 0.75):
    """Composite Gauss-Legendre rule for ``E[h(Z)]`` with interior breakpoints.

    ``breaks`` has shape ``(..., K)``; each row lists z-locations where the
    integrand has a kink.  Returns nodes and weights of shape ``(..., P)``
    (normal density folded into the weights).  Every row uses the same number of
    panels, so the result is a regular array.
    """
    breaks = np.asarray(breaks, dtype=float)
    base = np.linspace(-Z_MAX, Z_MAX, int(round(2 * Z_MAX / panel_width)) + 1)
    lead = breaks.shape[:-1]
    b = np.clip(breaks, -Z_MAX, Z_MAX)
    edges = np.concatenate([np.broadcast_to(base, lead + base.shape), b], axis=-1)
    edges = np.sort(edges, axis=-1)
    lo, hi = edges[..., :-1], edges[..., 1:]
    x, w = _legendre(n_panel)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = mid[..., None] + half[..., None] * x
    weights = half[..., None] * w * np.exp(-0.5 * nodes ** 2) / np.sqrt(2.0 * np.pi)
    shape = lead + (-1,)
    return nodes.reshape(shape), weights.reshape(shape)
