"""Brute-force reference computations used to cross-check the analytic paths.

Nothing here shares code with the quadrature in ``geometry``: finite
differences walk along the raw coefficient vectors, Monte Carlo uses
rejection sampling in a bounding box, and surface integrals use a plain
midpoint rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BoundingBoxError

FIELD_STEP = 1e-5
LAPLACIAN_STEP = 1e-3
CHUNK = 1 << 16


def _values(f, x):
    v = f(x) if not hasattr(f, "value") else f.value(x)
    return np.asarray(v, dtype=float)


def fd_apply_field(g, k, f, x, h=FIELD_STEP):
    """Central difference of f along V_k(x): [f(x + hV) - f(x - hV)] / 2h."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    V = g.fields(x)[:, k, :]
    return (_values(f, x + h * V) - _values(f, x - h * V)) / (2 * h)


def _nested(g, f, x, h):
    V = g.fields(x)
    out = np.zeros(x.shape[0])
    for k in range(g.N1):
        Vk = V[:, k, :]
        plus = fd_apply_field(g, k, f, x + h * Vk, h)
        minus = fd_apply_field(g, k, f, x - h * Vk, h)
        out += (plus - minus) / (2 * h)
    return out


def fd_sublaplacian(g, f, x, h=LAPLACIAN_STEP):
    """Nested central differences, Richardson-combined over steps h and h/2."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = _nested(g, f, x, h)
    b = _nested(g, f, x, h / 2)
    return (4 * b - a) / 3


class RngStream:
    """Counter-based stream: block j of a draw always comes from Philox(key=seed, counter=j).

    Samples therefore do not depend on how blocks are distributed over workers.
    """

    def __init__(self, seed: int, offset: int = 0):
        self.seed = int(seed) & ((1 << 64) - 1)
        self.offset = int(offset)

    def block(self, j: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed, counter=[0, 0, 0, self.offset + j])
        return np.random.Generator(bitgen)

    def uniform(self, n: int, dim: int, lo=0.0, hi=1.0) -> np.ndarray:
        out = np.empty((n, dim))
        for j, start in enumerate(range(0, n, CHUNK)):
            stop = min(n, start + CHUNK)
            out[start:stop] = self.block(j).random((stop - start, dim))
        return lo + (np.asarray(hi) - np.asarray(lo)) * out

    def split(self, i: int) -> "RngStream":
        return RngStream(self.seed ^ (0x9E3779B97F4A7C15 * (i + 1) & ((1 << 64) - 1)), self.offset)


def mc_volume_integrate(dom, integrand, n_samples: int, rng: RngStream):
    """Rejection Monte Carlo over the domain's bounding box -> (mean, std_error)."""
    lo, hi = dom.bounding_box()
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    box = float(np.prod(hi - lo))
    total = 0.0
    total2 = 0.0
    accepted = 0
    for j, start in enumerate(range(0, n_samples, CHUNK)):
        m = min(n_samples, start + CHUNK) - start
        pts = lo + (hi - lo) * rng.block(j).random((m, len(lo)))
        inside = dom.contains(pts)
        vals = np.zeros(m)
        if np.any(inside):
            vals[inside] = np.asarray(integrand(pts[inside]), dtype=float)
        accepted += int(inside.sum())
        total += float(vals.sum())
        total2 += float((vals * vals).sum())
    if accepted < 0.01 * n_samples:
        raise BoundingBoxError(f"acceptance rate {accepted / n_samples:.4f} < 1%")
    mean = total / n_samples
    var = max(total2 / n_samples - mean * mean, 0.0)
    return box * mean, box * math.sqrt(var / n_samples)


@dataclass
class ConvergenceTable:
    resolutions: list
    values: list
    limit: float
    observed_order: float
    monotone: bool


def refine_surface_grid(patch, integrand, levels: int = 4, base: int = 4) -> ConvergenceTable:
    """Midpoint rule on the patch parameter box at dyadic resolutions.

    ``integrand(y, jac)`` returns the pulled-back density at chart points
    y (M, N) with chart Jacobians jac (M, N, N-1).
    """
    if levels < 3:
        raise ValueError("need at least 3 refinement levels")
    lo = np.asarray(patch.lo, float)
    hi = np.asarray(patch.hi, float)
    dim = len(lo)
    res, vals = [], []
    for lev in range(levels):
        n = base * 2 ** lev
        h = (hi - lo) / n
        axes = [lo[i] + h[i] * (np.arange(n) + 0.5) for i in range(dim)]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        y = patch.chart(U)
        J = patch.jac(U)
        vals.append(float(np.sum(integrand(y, J)) * np.prod(h)))
        res.append(n)
    d1 = vals[-2] - vals[-3]
    d2 = vals[-1] - vals[-2]
    if d2 == 0 or d1 == 0 or d1 / d2 <= 0:
        order = float("inf") if d2 == 0 else float("nan")
    else:
        order = math.log2(abs(d1 / d2))
    p = order if math.isfinite(order) and order > 0.5 else 2.0
    limit = vals[-1] + (vals[-1] - vals[-2]) / (2 ** p - 1)
    diffs = np.abs(np.diff(vals))
    monotone = bool(np.all(diffs[1:] <= diffs[:-1] * 1.0000001 + 1e-300))
    return ConvergenceTable(res, vals, limit, order, monotone)
