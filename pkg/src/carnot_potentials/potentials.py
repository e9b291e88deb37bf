"""Fundamental solution, Newton potential, layer potentials and iterated kernels.

Conventions: eps(y, x) = beta * d(x^{-1} o y)^(2-Q), and gradients are
always taken in the first argument y, X_k^(y) eps(y, x) = beta (2-Q)
d^(1-Q) (X_k d)(x^{-1} o y) by left invariance.  beta comes out negative
with this sign convention (R^3: -1/(4 pi)); it is fixed by requiring the
flux of the horizontal gradient of eps(., x) through a sphere around x to be 1.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import (CapabilityError, GaugeInconsistencyError, GeometryError,
                     LimitDivergenceError, PVDivergenceError, SingularityError)
from .group import CarnotGroup, build_group

CHUNK = 1 << 20
BETA_SPREAD = 5e-3
LIMIT_FLAT = 1e-3


def _vals(u, y):
    if u is None:
        return np.ones(len(y))
    if np.isscalar(u):
        return np.full(len(y), float(u))
    f = u.value if hasattr(u, "value") else u
    return np.asarray(f(y), float)


class FundamentalSolution:
    """eps = beta d^(2-Q) with fast pairwise kernels for the builtin gauges."""

    def __init__(self, group: CarnotGroup, beta: float):
        self.group = group
        self.gauge = group.gauge()
        self.beta = float(beta)
        self.Q = group.Q
        self.kind = self.gauge.kind
        # closed-form kernels only when the gauge really belongs to the group
        self._euclid = self.kind == "euclidean" and group.is_euclidean
        self._fast = self._euclid or self._law_is_builtin()

    def __repr__(self):
        return f"FundamentalSolution({self.group.name}, beta={self.beta:.10g})"

    def _law_is_builtin(self):
        g = self.group
        if self.kind != "heisenberg" or not g.has_law:
            return False
        rng = np.random.default_rng(7)
        a, b = rng.normal(size=(2, 5, g.N))
        return np.allclose(g.multiply(a, b), _heis_mult(a, b), atol=1e-12)

    # pairwise pieces --------------------------------------------------
    def relative(self, y, x):
        """x^{-1} o y, broadcasting over leading axes."""
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        if self._euclid:
            return y - x
        if self._fast:
            return _heis_mult(-x, y)
        g = self.group
        return g.multiply(g.inverse(x), y)

    def _pieces(self, w, grad=True):
        """(eps, X eps) at relative points w (..., N)."""
        Q, b = self.Q, self.beta
        if self._euclid:
            r2 = np.sum(w * w, axis=-1)
            _check_pole(r2)
            eps = b * r2 ** ((2 - Q) / 2)
            if not grad:
                return eps, None
            return eps, (b * (2 - Q)) * (r2 ** (-Q / 2))[..., None] * w
        if self._fast:
            n = (w.shape[-1] - 1) // 2
            x, yy, t = w[..., :n], w[..., n:2 * n], w[..., -1]
            z2 = np.sum(x * x + yy * yy, axis=-1)
            P = z2 * z2 + 16.0 * t * t
            _check_pole(P)
            eps = b * P ** ((2 - Q) / 4)
            if not grad:
                return eps, None
            c = (b * (2 - Q)) * P ** (-(Q + 2) / 4)
            gx = c[..., None] * (z2[..., None] * x - 4.0 * yy * t[..., None])
            gy = c[..., None] * (z2[..., None] * yy + 4.0 * x * t[..., None])
            return eps, np.concatenate([gx, gy], axis=-1)
        shape = w.shape[:-1]
        flat = w.reshape(-1, w.shape[-1])
        d = self.gauge.d(flat)
        _check_pole(d)
        eps = b * d ** (2 - Q)
        if not grad:
            return eps.reshape(shape), None
        Xd = self.gauge.horizontal_grad(flat)
        ge = (b * (2 - Q)) * (d ** (1 - Q))[:, None] * Xd
        return eps.reshape(shape), ge.reshape(shape + (ge.shape[-1],))

    def eps(self, y, x):
        return self._pieces(self.relative(y, x), grad=False)[0]

    def grad_y(self, y, x):
        return self._pieces(self.relative(y, x))[1]

    def __call__(self, x, y):
        return self.eps(np.asarray(x, float), np.asarray(y, float))

    # sums ------------------------------------------------------------
    def kernel_sum(self, Y, Z, coef, grad=False):
        """sum_k coef_k eps(Y_m, Z_k) (and X^(Y) of it) for all m."""
        Y = np.atleast_2d(Y)
        Z = np.atleast_2d(Z)
        coef = np.asarray(coef, float)
        keep = coef != 0
        Z, coef = Z[keep], coef[keep]
        M = Y.shape[0]
        val = np.zeros(M)
        gr = np.zeros((M, self.group.N1)) if grad else None
        if len(coef) == 0:
            return (val, gr) if grad else val
        step = max(1, CHUNK // len(coef))
        for s in range(0, M, step):
            w = self.relative(Y[s:s + step, None, :], Z[None, :, :])
            e, ge = self._pieces(w, grad)
            val[s:s + step] = e @ coef
            if grad:
                gr[s:s + step] = np.einsum("mkj,k->mj", ge, coef)
        return (val, gr) if grad else val

    def double_layer_density(self, rule: geo.SurfaceRule, x):
        """<grad~ eps(., x), dnu> pulled back at the rule's nodes."""
        ge = self.grad_y(rule.y, np.asarray(x, float)[None, :])
        return np.einsum("mk,mk->m", ge, rule.densities(self.group))


def _heis_mult(a, b):
    n = (a.shape[-1] - 1) // 2
    sym = np.sum(a[..., :n] * b[..., n:2 * n] - a[..., n:2 * n] * b[..., :n], axis=-1)
    head = a[..., :-1] + b[..., :-1]
    t = a[..., -1] + b[..., -1] + 0.5 * sym
    return np.concatenate([head, t[..., None]], axis=-1)


def _check_pole(r):
    if np.any(r <= 0):
        raise SingularityError("kernel evaluated at its pole (x = y)")


# ---------------------------------------------------------------------------
# calibration


def calibrate_beta(dom: geo.AdmissibleDomain, x_interior, order=None) -> float:
    """beta = 1 / flux of grad~ d(x, .)^(2-Q) through the boundary of dom."""
    x = np.asarray(x_interior, float)
    if not dom.contains(x[None])[0]:
        raise GeometryError("calibration point must lie inside the domain")
    unit = FundamentalSolution(dom.group, 1.0)
    rule = dom.surface_rule(order)
    flux = float(np.sum(rule.w * unit.double_layer_density(rule, x)))
    return 1.0 / flux


_BETA_CACHE: dict = {}
_BETA_LOCK = threading.Lock()


def calibration_setups(group: CarnotGroup):
    """Two domains with three interior points each, used by calibrated_beta."""
    N = group.N
    rng = np.random.default_rng(2024)
    out = []
    # surface rules grow like order^(N-1); the integrand is smooth, so lower orders suffice in high N
    order = 32 if N <= 3 else max(8, 64 // N)
    doms = [geo.euclidean_ball(group, radius=1.0, order=order)]
    if not group.is_euclidean:
        doms.insert(0, geo.gauge_ball(group, radius=1.0, order=order))
    else:
        doms.append(geo.box(group, half_widths=1.0, order=order))
    for dom in doms:
        pts = [np.zeros(N)]
        while len(pts) < 3:
            p = rng.uniform(-0.2, 0.2, N)
            if dom.contains(p[None])[0]:
                pts.append(p)
        out.append((dom, pts))
    return out


def calibrated_beta(group: CarnotGroup, tol=BETA_SPREAD):
    """Calibrate once per group and gauge; raise if the points disagree."""
    key = (group.name, tuple(group.strata), group.spec.gauge)
    with _BETA_LOCK:
        if key in _BETA_CACHE:
            return _BETA_CACHE[key]
    values = []
    for dom, pts in calibration_setups(group):
        for p in pts:
            values.append(calibrate_beta(dom, p))
    values = np.array(values)
    mean = float(np.mean(values))
    spread = float((values.max() - values.min()) / abs(mean))
    if spread > tol:
        raise GaugeInconsistencyError(
            f"beta varies by {spread:.2%} across calibration points; d is not the L-gauge")
    with _BETA_LOCK:
        _BETA_CACHE[key] = (mean, spread, values)
    return _BETA_CACHE[key]


def fundamental_solution_for(group, beta=None) -> FundamentalSolution:
    if isinstance(group, str):
        group = build_group(group)
    if beta is None:
        beta = calibrated_beta(group)[0]
    return FundamentalSolution(group, beta)


def fundamental_solution(fs: FundamentalSolution, x, y) -> float:
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.array_equal(x, y):
        raise SingularityError("fundamental solution has a pole at x = y")
    return float(fs.eps(x[None], y[None])[0])


def eps_horizontal_gradient(fs: FundamentalSolution, x, y) -> np.ndarray:
    """X_k applied to eps(., y) at x."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if np.array_equal(x, y):
        raise SingularityError("fundamental solution has a pole at x = y")
    return fs.grad_y(x[None], y[None])[0]


# ---------------------------------------------------------------------------
# Newton potential


def support_domain(fs, dom, f, order=None):
    """Domain over which f is integrated: its declared support ball, else dom."""
    sup = getattr(f, "support", None)
    if sup is None:
        return dom
    c, a, metric = sup
    order = order or dom.order
    if metric == "gauge" and not fs.group.is_euclidean:
        return geo.GaugeBall(fs.group, c, a, order)
    return geo.EuclideanBall(fs.group, c, a, order)


def newton_potential(fs: FundamentalSolution, dom, f, x, order=None, grad=False):
    """int f(y) eps(y, x) dnu(y); x may be one point or an (M, N) array."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    sd = support_domain(fs, dom, f, order)
    val = np.zeros(len(X))
    gr = np.zeros((len(X), fs.group.N1))
    inside = sd.contains(X) if sd is not dom else dom.level(X) <= 0
    out_idx = np.where(~inside)[0]
    if len(out_idx):
        pts, w = sd.volume_rule(order)
        coef = w * _vals(f, pts)
        res = fs.kernel_sum(X[out_idx], pts, coef, grad=True)
        val[out_idx] = res[0]
        gr[out_idx] = res[1]
    for i in np.where(inside)[0]:
        pts, w = sd.polar_rule(X[i], order, singular=False)
        coef = w * _vals(f, pts)
        # eps(y, x) = eps(x, y), so the x-gradient is grad_y with roles swapped
        e, ge_x = fs._pieces(fs.relative(X[i][None], pts))
        val[i] = float(coef @ e)
        gr[i] = coef @ ge_x
    if grad:
        return (val[0], gr[0]) if single else (val, gr)
    return val[0] if single else val


def newton_operator(fs, dom, f, order=None):
    """Callable u(x) = N f(x) and its horizontal gradient, for boundary data."""

    def value(y):
        return newton_potential(fs, dom, f, y, order)

    def hgrad(y):
        return newton_potential(fs, dom, f, y, order, grad=True)[1]

    return value, hgrad


def radial_newton_profiles(fs, dom, f, m, n=48):
    """Radial profiles g_0 = f, g_{k+1} = N g_k for f radial about a Euclidean ball centre.

    Uses the shell theorem: for radial g on the ball of radius R,
    N g(r) = beta |S| (r^(2-N) int_0^r g s^(N-1) ds + int_r^R g s ds),
    (N g)'(r) = beta |S| (2-N) r^(1-N) int_0^r g s^(N-1) ds.
    Returns a list of (value(r), derivative(r)) callables for k = 0..m.
    For r > R the same formulas give the smooth continuation of the
    interior solution (L g_{k+1} = g_k keeps holding), which is what
    finite-difference stencils centred on the boundary need.
    """
    g = fs.group
    if not (g.is_euclidean and isinstance(dom, geo.EuclideanBall)):
        raise CapabilityError("radial profiles need a Euclidean ball in R^N")
    rad = getattr(f, "radial", None)
    if rad is None or not np.allclose(rad[0], dom.center):
        raise CapabilityError("radial profiles need f radial about the ball centre")
    N = g.N
    R = dom.radius
    area = 2 * math.pi ** (N / 2) / math.gamma(N / 2)
    c = fs.beta * area
    profile = rad[1]
    # split at the support radius so the C^3 kink does not spoil the rule
    sup = getattr(f, "support", None)
    kink = float(sup[1]) if sup is not None else None

    def integrate(fun, a, b, weight_pow):
        a = np.asarray(a, float)
        b = np.asarray(b, float)
        edges = [a, b]
        if kink is not None:
            mid = np.clip(kink, a, b)
            edges = [a, mid, b]
        tot = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            s, w = geo.gl_nodes(lo, hi, n)
            tot = tot + np.sum(w * fun(s) * s ** weight_pow, axis=-1)
        return tot

    levels = [(profile, None)]

    def make(prev):
        def value(r):
            r = np.asarray(r, float)
            inner = integrate(prev, np.zeros_like(r), r, N - 1)
            outer = integrate(prev, r, np.full_like(r, R), 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                head = np.where(r > 0, r ** (2.0 - N) * inner, 0.0)
            return c * (head + outer)

        def deriv(r):
            r = np.asarray(r, float)
            inner = integrate(prev, np.zeros_like(r), r, N - 1)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(r > 0, c * (2 - N) * r ** (1.0 - N) * inner, 0.0)

        return value, deriv

    for _ in range(m):
        levels.append(make(levels[-1][0]))
    return levels


# ---------------------------------------------------------------------------
# layer potentials


def _near_distance(dom, x):
    rule = dom.surface_rule(8)
    return float(np.min(np.linalg.norm(rule.y - x, axis=1)))


def _layer_rule(dom, x, foot=None, order=None, near=0.25):
    """Plain rule far from the boundary, quasi-polar rule around the gauge foot otherwise."""
    x = np.asarray(x, float)
    if foot is None and _near_distance(dom, x) > near * dom.diameter():
        return dom.surface_rule(order)
    if foot is None:
        i, u = dom.locate(x)
    else:
        i, u = dom.locate(foot)
    i, u, y, dist = geo.gauge_foot(dom, x, i, u)
    if dist < 1e-14:
        raise SingularityError("target lies on the boundary; use the on-boundary variant")
    # no second gate on the gauge distance: in step-2 groups a moderate gauge
    # distance can still be a small Euclidean one, which the plain rule cannot resolve
    try:
        frame = geo.local_frame(dom, y)
    except GeometryError:
        # foot on a patch seam: no single-patch frame, refine the plain rule instead
        return dom.surface_rule(2 * (order or dom.order))
    return geo.near_field_rule(dom, frame, order, offset=dist)


def single_layer(fs, dom, j, u, x, foot=None, order=None, on_boundary=None) -> float:
    """int u(y) eps(y, x) <X_j, dnu(y)> (j 0-based)."""
    x = np.asarray(x, float)
    if on_boundary is None:
        on_boundary = abs(float(dom.level(x[None])[0])) < 1e-12
    if on_boundary:
        frame = geo.local_frame(dom, x)
        rule = geo.near_field_rule(dom, frame, order, offset=None)
    else:
        rule = _layer_rule(dom, x, foot, order)
    dens = rule.densities(fs.group)[:, j]
    return float(np.sum(rule.w * _vals(u, rule.y) * fs.eps(rule.y, x[None]) * dens))


def _double_off(fs, dom, u, x, foot=None, order=None):
    rule = _layer_rule(dom, x, foot, order)
    return float(np.sum(rule.w * _vals(u, rule.y) * fs.double_layer_density(rule, x)))


def jump_function(fs, dom, x0, order=None, frame=None) -> geo.QuadratureResult:
    """J(x0) = PV int <grad~ eps(., x0), dnu>."""
    x0 = np.asarray(x0, float)
    return geo.principal_value(dom, x0, lambda rule: fs.double_layer_density(rule, x0),
                               order=order, frame=frame)


def double_layer_on_boundary(fs, dom, u, x0, order=None, J=None):
    """D0 u(x0) = int (u - u(x0)) <grad~ eps, dnu> + J(x0) u(x0)."""
    x0 = np.asarray(x0, float)
    frame = geo.local_frame(dom, x0)
    u0 = float(_vals(u, x0[None])[0])
    rule = geo.near_field_rule(dom, frame, order, offset=None)
    sub = float(np.sum(rule.w * (_vals(u, rule.y) - u0) * fs.double_layer_density(rule, x0)))
    if J is None:
        J = jump_function(fs, dom, x0, order, frame).value
    return sub + J * u0, J


def double_layer_limit(fs, dom, u, x0, side, h0=0.01, order=None):
    """Limit of D u at x0 -/+ h n (interior/exterior) through an h ladder fit."""
    x0 = np.asarray(x0, float)
    n = dom.outward_normal(x0)
    sgn = -1.0 if side == "interior_limit" else 1.0
    hs = [h0, h0 / 2, h0 / 4]
    vals = [_double_off(fs, dom, u, x0 + sgn * h * n, foot=x0, order=order) for h in hs]
    try:
        # a ladder flat to LIMIT_FLAT is below the near-rule noise: take the last rung
        a, gamma, err = geo.fit_power_limit(hs, vals, min_gamma=0.5, noise=LIMIT_FLAT)
    except PVDivergenceError as exc:
        raise LimitDivergenceError(f"{side} ladder {vals}: {exc}") from None
    return geo.QuadratureResult(a, err, 0), vals


def double_layer(fs, dom, u, x, side="off", order=None, h0=0.01) -> float:
    if side == "off":
        return _double_off(fs, dom, u, x, order=order)
    if side == "on_boundary":
        return double_layer_on_boundary(fs, dom, u, x, order)[0]
    if side in ("interior_limit", "exterior_limit"):
        return double_layer_limit(fs, dom, u, x, side, h0, order)[0].value
    raise ValueError(f"unknown side {side!r}")


# ---------------------------------------------------------------------------
# iterated kernels


class IteratedKernel:
    """eps_m(y, x) = int_Omega eps_{m-1}(y, z) eps(z, x) dnu(z), m <= 3.

    The two singular points are separated by a smooth partition of unity
    w_y(z) = d(z,x)^p / (d(z,x)^p + d(z,y)^p) with p = Q + 2, so that
    each part has a single singularity and is integrated with a polar rule
    centred on it.  The value of p makes w_y * eps(z, x) a polynomial in
    d(z, x)^4 near x for both builtin gauges.
    """

    def __init__(self, m: int, base: FundamentalSolution, domain, order=12, radial_order=None):
        if not 1 <= m <= 3:
            raise CapabilityError(f"iterated kernels are implemented for m <= 3, got {m}")
        self.m = m
        self.base = base
        self.domain = domain
        self.order = order
        self.radial_order = radial_order or order
        self.p = base.Q + 2
        self._cache = {}
        self._lock = threading.Lock()

    def _rule(self, c):
        key = tuple(np.round(c, 15))
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        dom = self.domain
        on_b = abs(float(dom.level(c[None])[0])) < 1e-12
        if on_b and isinstance(dom, geo.EuclideanBall) and dom.N == 3:
            rule = dom.spherical_polar_rule(c, self.order, singular=True)
        else:
            rule = dom.polar_rule(c, self.order, self.radial_order, singular=on_b)
        with self._lock:
            if len(self._cache) > 256:
                self._cache.clear()
            self._cache[key] = rule
        return rule

    def _weights(self, z, y, x):
        fs = self.base
        dx = fs.gauge.d(fs.relative(z, x[None]))
        dy = fs.gauge.d(fs.relative(z, y[None]))
        ax, ay = dx ** self.p, dy ** self.p
        return ax / (ax + ay)

    def _lower(self, z, y):
        """eps_{m-1}(y, z) and its X^(y) gradient for z (M, N)."""
        if self.m == 2:
            e, ge = self.base._pieces(self.base.relative(y[None], z))
            return e, ge
        inner = IteratedKernel(self.m - 1, self.base, self.domain, max(4, self.order // 2))
        vals = np.empty(len(z))
        grads = np.empty((len(z), self.base.group.N1))
        for i, zz in enumerate(z):
            vals[i], grads[i] = inner.eval(y, zz, grad=True)
        return vals, grads

    def eval(self, y, x, grad=False):
        fs = self.base
        y = np.asarray(y, float)
        x = np.asarray(x, float)
        if self.m == 1:
            e = fundamental_solution(fs, y, x)
            return (e, eps_horizontal_gradient(fs, y, x)) if grad else e
        if np.allclose(y, x, atol=1e-14):
            raise SingularityError("coincident points in the iterated kernel")
        total = 0.0
        gtot = np.zeros(fs.group.N1)
        for centre, near_y in ((y, True), (x, False)):
            z, w = self._rule(centre)
            wy = self._weights(z, y, x)
            part = wy if near_y else 1.0 - wy
            ez, gz = self._lower(z, y)
            ex = fs.eps(z, x[None])
            c = w * part * ex
            total += float(c @ ez)
            if grad:
                gtot += c @ gz
        return (total, gtot) if grad else total


def iterated_kernel_eval(ik: IteratedKernel, y, x, grad=False):
    return ik.eval(y, x, grad)
