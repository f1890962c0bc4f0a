"""Graded Gauss-Legendre rules for integrands with power-law kinks at known points."""
from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=32)
def _graded_reference(n: int, grading: float) -> tuple[np.ndarray, np.ndarray]:
    # map s in (0,1) to phi(s) = s^q / (s^q + (1-s)^q): algebraic clustering at both ends
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (x + 1.0)
    q = grading
    num = s**q
    den = s**q + (1.0 - s) ** q
    phi = num / den
    dphi = q * (s * (1.0 - s)) ** (q - 1.0) / den**2
    return phi, 0.5 * w * dphi


def graded_rule(breakpoints, n: int = 32, grading: float = 3.0) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on ``[min, max]`` of ``breakpoints``, graded toward every breakpoint."""
    bp = np.unique(np.asarray(breakpoints, dtype=float))
    if len(bp) < 2:
        raise ValueError("need at least two distinct breakpoints")
    phi, wref = _graded_reference(n, grading)
    a, b = bp[:-1, None], bp[1:, None]
    nodes = a + (b - a) * phi[None, :]
    weights = (b - a) * wref[None, :]
    return nodes.ravel(), weights.ravel()


def past_breakpoints(lower: float, anchor: float, scale: float, ratio: float = 2.0) -> np.ndarray:
    """Geometric breakpoints from ``anchor`` back to ``lower`` starting at spacing ``scale``."""
    if lower >= anchor:
        return np.array([anchor])
    pts = [anchor]
    step = scale
    while anchor - step > lower:
        pts.append(anchor - step)
        step *= ratio
    pts.append(lower)
    return np.array(pts[::-1])


def semi_infinite_rule(anchor: float, scale: float, n: int = 64, decades: float = 60.0) -> tuple[np.ndarray, np.ndarray]:
    """Rule on ``(-inf, anchor - scale]`` via ``u = anchor - scale * exp(x)``, ``x in [0, decades]``.

    Suited to integrands decaying like a power of ``|u|``.
    """
    x, w = graded_rule(np.linspace(0.0, decades, int(np.ceil(decades / 2.0)) + 1), n=max(8, n // 4), grading=1.0)
    u = anchor - scale * np.exp(x)
    return u, w * scale * np.exp(x)
