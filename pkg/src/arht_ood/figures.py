"""Plot-ready curves: null densities and ARHT score histograms."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import betaln

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def normal_pdf(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def f_pdf(x, d1: int, d2: int) -> np.ndarray:
    """Density of ``F(d1, d2)`` evaluated in log space; zero for ``x <= 0``."""
    if d1 < 1 or d2 < 1:
        raise ValueError(f"F degrees of freedom must be >= 1, got ({d1}, {d2})")
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    xp = x[pos]
    log_pdf = (
        0.5 * d1 * math.log(d1)
        + 0.5 * d2 * math.log(d2)
        + (0.5 * d1 - 1.0) * np.log(xp)
        - 0.5 * (d1 + d2) * np.log(d2 + d1 * xp)
        - betaln(0.5 * d1, 0.5 * d2)
    )
    out[pos] = np.exp(log_pdf)
    return out


def hotelling_null_pdf(x, p: int, n: int) -> np.ndarray:
    """Null density of the scaled Hotelling statistic, ``F(p, n - p)``."""
    if n <= p:
        raise ValueError(f"need n > p, got p={p}, n={n}")
    return f_pdf(x, p, n - p)


def density_table(grid, pairs) -> dict[str, np.ndarray]:
    """Columns ``x``, ``normal`` and ``F_<p>_<n-p>`` for each ``(p, n)``."""
    grid = np.asarray(grid, dtype=float)
    cols = {"x": grid, "normal": normal_pdf(grid)}
    for p, n in pairs:
        cols[f"F_{p}_{n - p}"] = hotelling_null_pdf(grid, p, n)
    return cols


def score_histograms(scores, flags, bins=50) -> dict[str, np.ndarray]:
    """Density histograms of scores for in-distribution (0) and OOD (1) rows
    on shared bin edges."""
    scores = np.asarray(scores, dtype=float)
    flags = np.asarray(flags, dtype=int)
    edges = np.histogram_bin_edges(scores, bins=bins)
    out = {"bin_left": edges[:-1], "bin_right": edges[1:]}
    for name, flag in (("in_distribution", 0), ("ood", 1)):
        sel = scores[flags == flag]
        if sel.size:
            out[name] = np.histogram(sel, bins=edges, density=True)[0]
        else:
            out[name] = np.zeros(len(edges) - 1)
    return out
