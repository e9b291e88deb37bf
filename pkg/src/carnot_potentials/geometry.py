"""Admissible domains, boundary patches and the quadrature built on them.

Boundaries of balls are covered by the 2N faces of the cube [-1, 1]^N,
pushed onto the sphere by a normalisation (Euclidean or dilation based).
Volume integrals use polar rules around a centre, x = x0 o delta_rho(omega),
whose Jacobian rho^(Q-1) absorbs the d^(2-Q) singularity at x0.

Near-singular and singular surface integrals split the patch containing the
target point into a smooth far part and a small disk handled in
quasi-polar coordinates u = u0 + A (s cos t, s^e sin t); e = 2 along the
non-horizontal tangent direction, which makes gauge balls around the target
look round.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import GeometryError, PVDivergenceError, SingularityError
from .group import CarnotGroup
from .polynomial import Poly

DEFAULT_ORDER = 16
GRADING_EXPONENT = 3
CHAR_THRESHOLD = 1e-6


@lru_cache(maxsize=None)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


def gl_nodes(a, b, n: int):
    """Gauss-Legendre nodes on [a, b]; a, b may be arrays (broadcast on a new last axis)."""
    x, w = _leggauss(n)
    a = np.asarray(a, dtype=float)[..., None]
    b = np.asarray(b, dtype=float)[..., None]
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _graded_nodes(a, b, n, target=None, exponent=GRADING_EXPONENT):
    """1D rule on [a, b], graded toward ``target`` if given (split there)."""
    if target is None or not (a <= target <= b):
        return gl_nodes(a, b, n)
    xs, ws = [], []
    tau, tw = gl_nodes(0.0, 1.0, n)
    for end in (a, b):
        length = end - target
        if abs(length) < 1e-15:
            continue
        xs.append(target + length * tau ** exponent)
        ws.append(abs(length) * exponent * tau ** (exponent - 1) * tw)
    return np.concatenate(xs), np.concatenate(ws)


def tensor_rule(lo, hi, order, panels=1, target=None, exponent=GRADING_EXPONENT):
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    axes, weights = [], []
    for i in range(len(lo)):
        edges = np.linspace(lo[i], hi[i], panels + 1)
        xs, ws = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            t = None if target is None else float(target[i])
            if t is not None and not (a <= t <= b):
                t = None
            x, w = _graded_nodes(a, b, order, t, exponent)
            xs.append(x)
            ws.append(w)
        axes.append(np.concatenate(xs))
        weights.append(np.concatenate(ws))
    grids = np.meshgrid(*axes, indexing="ij")
    wgrids = np.meshgrid(*weights, indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=1)
    W = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return U, W


@dataclass
class QuadratureResult:
    value: float
    error_estimate: float
    nodes_used: int

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# patches


class BoundaryPatch:
    """Chart u -> y(u) on an axis-aligned parameter box, with its Jacobian."""

    def __init__(self, lo, hi, chart, jac, orientation=1, order=DEFAULT_ORDER, panels=1,
                 grading=None, name=""):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self._chart = chart
        self._jac = jac
        self.orientation = int(orientation)
        self.order = int(order)
        self.panels = int(panels)
        self.grading = grading  # {"target": [...], "exponent": p}
        self.name = name

    def chart(self, U):
        return self._chart(np.atleast_2d(np.asarray(U, float)))

    def jac(self, U):
        return self._jac(np.atleast_2d(np.asarray(U, float)))

    def rule(self, order=None, panels=None):
        target = exponent = None
        if self.grading:
            target = self.grading.get("target")
            exponent = self.grading.get("exponent", GRADING_EXPONENT)
        return tensor_rule(self.lo, self.hi, order or self.order, panels or self.panels,
                           target, exponent or GRADING_EXPONENT)

    def contains_param(self, U, margin=0.0):
        U = np.atleast_2d(U)
        return np.all((U >= self.lo + margin) & (U <= self.hi - margin), axis=1)


def _det(A):
    # closed form for 1x1 and 2x2 keeps column swaps exactly antisymmetric
    n = A.shape[-1]
    if n == 1:
        return A[..., 0, 0]
    if n == 2:
        return A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    return np.linalg.det(A)


def cofactor_normal(J):
    """n_i = det[e_i | J] for J of shape (M, N, N-1); <V, n> = det[V | J]."""
    M, N, _ = J.shape
    out = np.empty((M, N))
    for i in range(N):
        minor = np.delete(J, i, axis=1)
        out[:, i] = (-1) ** i * (_det(minor) if N > 1 else 1.0)
    return out


@dataclass
class SurfaceRule:
    y: np.ndarray       # (M, N)
    jac: np.ndarray     # (M, N, N-1)
    w: np.ndarray       # (M,) parameter weights, already signed by orientation
    patch: np.ndarray   # (M,) patch index
    _normal: Optional[np.ndarray] = field(default=None, repr=False)
    _dens: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def size(self):
        return len(self.w)

    def normal(self):
        if self._normal is None:
            self._normal = cofactor_normal(self.jac)
        return self._normal

    def densities(self, group: CarnotGroup):
        """Pulled-back densities of <X_k, dnu> (times signed weights excluded), shape (M, N1)."""
        if self._dens is None:
            V = group.fields(self.y)
            self._dens = np.einsum("mkj,mj->mk", V, self.normal())
        return self._dens

    @staticmethod
    def concat(rules):
        rules = [r for r in rules if r is not None and r.size]
        return SurfaceRule(
            np.concatenate([r.y for r in rules]),
            np.concatenate([r.jac for r in rules]),
            np.concatenate([r.w for r in rules]),
            np.concatenate([r.patch for r in rules]),
        )


# ---------------------------------------------------------------------------
# cube-face spheres


def _face_embed(U, axis, sign, N):
    M = U.shape[0]
    P = np.empty((M, N))
    P[:, axis] = sign
    P[:, [i for i in range(N) if i != axis]] = U
    return P


def _face_select(axis, N):
    E = np.zeros((N, N - 1))
    for c, i in enumerate(i for i in range(N) if i != axis):
        E[i, c] = 1.0
    return E


class SphereMap:
    """Unit sphere {n(p) = 1} of a homogeneous norm, as p -> delta_{1/n(p)} p on cube faces.

    ``weights`` are the dilation weights (all ones for the Euclidean norm);
    ``norm``/``norm_grad`` evaluate the norm and its ambient gradient.
    """

    def __init__(self, N, weights, norm, norm_grad, half=None):
        self.N = N
        self.weights = np.asarray(weights, float)
        self.norm = norm
        self.norm_grad = norm_grad
        # cube half-widths; matching the sphere's extent keeps the chart far from
        # complex singularities of the norm, which matters for spectral convergence
        self.half = np.ones(N) if half is None else np.asarray(half, float)

    @classmethod
    def euclidean(cls, N):
        return cls(N, np.ones(N), lambda p: np.linalg.norm(p, axis=1),
                   lambda p: p / np.linalg.norm(p, axis=1)[:, None])

    @classmethod
    def gauge(cls, group):
        G = group.gauge()
        half = np.ones(group.N)
        if G.kind == "heisenberg":
            half[-1] = 0.25
        return cls(group.N, group.weights, G.d, G.ambient_grad, half)

    def point(self, U, axis, sign):
        P = _face_embed(U, axis, sign, self.N) * self.half
        d = self.norm(P)
        return P * (1.0 / d)[:, None] ** self.weights

    def point_jac(self, U, axis, sign):
        P = _face_embed(U, axis, sign, self.N) * self.half
        d = self.norm(P)
        s = 1.0 / d
        om = P * s[:, None] ** self.weights
        E = self.half[:, None] * _face_select(axis, self.N)
        Ds = s[:, None] ** self.weights  # (M, N)
        gradE = self.norm_grad(P) @ E    # (M, N-1)
        Wom = self.weights * om
        return Ds[:, :, None] * E[None] - Wom[:, :, None] * (gradE / d[:, None])[:, None, :]

    def angular_rule(self, order, panels=1):
        """Nodes omega on the unit sphere with weights for dnu = rho^(Q-1) drho dsigma."""
        U, W = tensor_rule(-np.ones(self.N - 1), np.ones(self.N - 1), order, panels)
        oms, ws = [], []
        for axis in range(self.N):
            for sign in (-1.0, 1.0):
                om = self.point(U, axis, sign)
                J = self.point_jac(U, axis, sign)
                A = np.concatenate([(self.weights * om)[:, :, None], J], axis=2)
                oms.append(om)
                ws.append(W * np.abs(np.linalg.det(A)))
        return np.concatenate(oms), np.concatenate(ws)

    def locate(self, om):
        """Face (axis, sign) and parameter u with point(u) = om."""
        om = np.asarray(om, float)
        with np.errstate(divide="ignore"):
            lam = np.where(np.abs(om) > 0, (self.half / np.abs(om)) ** (1.0 / self.weights), np.inf)
        axis = int(np.argmin(lam))
        p = om * lam[axis] ** self.weights / self.half
        sign = 1.0 if p[axis] > 0 else -1.0
        u = np.delete(p, axis)
        return axis, sign, u


# ---------------------------------------------------------------------------
# domains


class AdmissibleDomain:
    """Base class. Subclasses supply level(), patches and a volume rule."""

    kind = "abstract"

    def __init__(self, group: CarnotGroup, center, radius=None, order=DEFAULT_ORDER):
        self.group = group
        self.center = np.asarray(center, float)
        self.radius = radius
        self.order = int(order)
        self.patches: list[BoundaryPatch] = []
        self._surface_cache = {}
        self._volume_cache = {}

    def __repr__(self):
        return f"{type(self).__name__}({self.group.name}, center={self.center.tolist()}, radius={self.radius})"

    @property
    def N(self):
        return self.group.N

    @property
    def contains_origin(self):
        return bool(self.level(np.zeros((1, self.N)))[0] < 0)

    def describe(self) -> dict:
        return {"kind": self.kind, "group": self.group.name, "center": self.center.tolist(),
                "radius": self.radius}

    def level(self, y):
        raise NotImplementedError

    def contains(self, y):
        return self.level(np.atleast_2d(y)) < 0

    def bounding_box(self):
        raise NotImplementedError

    def diameter(self):
        lo, hi = self.bounding_box()
        return float(np.linalg.norm(np.asarray(hi) - np.asarray(lo)))

    # surface ------------------------------------------------------------
    def surface_rule(self, order=None, panels=None, skip=None) -> SurfaceRule:
        key = (order or self.order, panels, skip)
        if key not in self._surface_cache:
            parts = []
            for i, P in enumerate(self.patches):
                if skip is not None and i == skip:
                    continue
                U, W = P.rule(order, panels)
                y = P.chart(U)
                parts.append(SurfaceRule(y, P.jac(U), W * P.orientation, np.full(len(W), i)))
            self._surface_cache[key] = SurfaceRule.concat(parts)
        return self._surface_cache[key]

    def locate(self, x0):
        """(patch index, parameter) of a boundary point."""
        raise NotImplementedError

    def outward_normal(self, x0):
        """Euclidean unit outward normal at a boundary point."""
        i, u = self.locate(x0)
        P = self.patches[i]
        n = cofactor_normal(P.jac(u[None, :]))[0] * P.orientation
        return n / np.linalg.norm(n)

    # volume -------------------------------------------------------------
    def volume_rule(self, order=None):
        raise NotImplementedError

    def polar_kind(self):
        return "group" if self.group.spec.gauge is not None and self.group.Q >= 3 else "euclidean"

    def sphere_map(self, kind):
        if kind == "group" and not self.group.is_euclidean:
            return SphereMap.gauge(self.group)
        return SphereMap.euclidean(self.N)

    def exit_radius(self, x0, om, kind):
        """Largest R with x0 o delta_rho(om) (or x0 + rho om) inside for rho < R."""
        return _exit_radius_numeric(self, x0, om, kind)

    def ray_points(self, x0, om, rho, kind):
        """Points x0 o delta_rho(om), om (M, N), rho (M, K) -> (M, K, N)."""
        g = self.group
        if kind == "euclidean" or g.is_euclidean:
            return x0 + rho[..., None] * om[:, None, :]
        z = om[:, None, :] * rho[..., None] ** g.weights
        return g.multiply(x0, z.reshape(-1, self.N)).reshape(z.shape)

    def polar_rule(self, x0, order=None, radial_order=None, singular=False, excision=None,
                   panels=1, depth=12):
        """Polar rule around x0 (inside the closure, star-shaped w.r.t. x0).

        Returns points (M, N) and weights (M,).  With ``singular`` the radial
        variable uses geometric panels toward x0; ``excision`` drops the
        inner fraction [0, excision * R] of every ray; ``depth`` caps the
        number of geometric panels (ratio 4) used by the singular grading.
        """
        order = order or self.order
        radial_order = radial_order or order
        kind = self.polar_kind()
        x0 = np.asarray(x0, float)
        smap = self.sphere_map(kind)
        om, wa = smap.angular_rule(order, panels)
        R = self.exit_radius(x0, om, kind)
        # from a boundary point the outward rays have R ~ 1e-16; their nodes would sit on x0
        keep = R > 1e-12 * (self.radius or 1.0)
        om, wa, R = om[keep], wa[keep], R[keep]
        tau, tw = _radial_fractions(radial_order, singular, excision, depth)
        rho = R[:, None] * tau[None, :]
        wr = R[:, None] * tw[None, :]
        expo = (self.group.Q if kind == "group" else self.N) - 1
        pts = self.ray_points(x0, om, rho, kind)
        W = wa[:, None] * wr * rho ** expo
        return pts.reshape(-1, self.N), W.ravel()


def _radial_fractions(order, singular, excision, depth=12):
    """Nodes/weights in [excision, 1] as fractions of the ray length."""
    lo = float(excision or 0.0)
    if not singular:
        x, w = gl_nodes(lo, 1.0, order)
        return x, w
    edges = [1.0]
    while edges[-1] / 4.0 > max(lo, 1e-15):
        edges.append(edges[-1] / 4.0)
        if len(edges) > depth:
            break
    edges.append(lo)
    edges = edges[::-1]
    xs, ws = [], []
    n = max(4, order // 2)
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gl_nodes(a, b, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _exit_radius_numeric(dom, x0, om, kind, samples=48, iters=60):
    """First crossing of level() along each ray, with a re-entry check."""
    rmax = 2.5 * dom.diameter() + 1.0
    if kind == "group" and not dom.group.is_euclidean:
        # rho is a gauge radius; bound it through the gauge of the bounding box corners
        G = dom.group.gauge()
        lo, hi = dom.bounding_box()
        corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(dom.N, -1).T
        g = dom.group
        rmax = 2.5 * float(np.max(G.d(g.multiply(g.inverse(x0), corners)))) + 1e-9
    grid = np.linspace(0.0, rmax, samples + 1)[1:]
    M = om.shape[0]
    pts = dom.ray_points(x0, om, np.broadcast_to(grid, (M, samples)), kind)
    lev = dom.level(pts.reshape(-1, dom.N)).reshape(M, samples)
    outside = lev >= 0
    first = np.argmax(outside, axis=1)
    if not np.all(outside.any(axis=1)):
        raise GeometryError("ray never leaves the domain; bounding box too small")
    # re-entry after the first exit means x0 does not see the boundary once
    idx = np.arange(samples)[None, :]
    reentry = (~outside) & (idx > first[:, None])
    if np.any(reentry):
        raise GeometryError("domain is not star-shaped with respect to the polar centre")
    a = np.where(first > 0, grid[np.maximum(first - 1, 0)], 0.0)
    b = grid[first]
    x0_inside = dom.level(np.atleast_2d(x0))[0] < 0
    if not x0_inside:
        # on the boundary: rays that leave immediately have zero length
        pass
    for _ in range(iters):
        mid = 0.5 * (a + b)
        p = dom.ray_points(x0, om, mid[:, None], kind)[:, 0, :]
        inside = dom.level(p) < 0
        a = np.where(inside, mid, a)
        b = np.where(inside, b, mid)
    return 0.5 * (a + b)


class _CubeSphereDomain(AdmissibleDomain):
    """Shared code for balls whose boundary is a normalised cube surface."""

    def _build_patches(self, smap: SphereMap, to_boundary, to_boundary_jac):
        self.smap = smap
        N = self.N
        lo, hi = -np.ones(N - 1), np.ones(N - 1)
        for axis in range(N):
            for sign in (-1.0, 1.0):
                chart = (lambda U, a=axis, s=sign: to_boundary(smap.point(U, a, s)))
                jac = (lambda U, a=axis, s=sign: to_boundary_jac(smap.point(U, a, s), smap.point_jac(U, a, s)))
                P = BoundaryPatch(lo, hi, chart, jac, 1, self.order, name=f"face{'-+'[sign > 0]}{axis}")
                uc = np.zeros((1, N - 1))
                n = cofactor_normal(P.jac(uc))[0]
                out = P.chart(uc)[0] - self.center
                P.orientation = 1 if float(n @ out) > 0 else -1
                self.patches.append(P)

    def _unit_point(self, x0):
        raise NotImplementedError

    def locate(self, x0):
        om = self._unit_point(np.asarray(x0, float))
        axis, sign, u = self.smap.locate(om)
        idx = 2 * axis + (1 if sign > 0 else 0)
        return idx, u


class EuclideanBall(_CubeSphereDomain):
    """{|y - c| < r} in ambient coordinates (any group)."""

    kind = "euclidean_ball"

    def __init__(self, group, center, radius, order=DEFAULT_ORDER):
        super().__init__(group, center, float(radius), order)
        r, c = self.radius, self.center
        self._build_patches(SphereMap.euclidean(self.N), lambda om: c + r * om,
                            lambda om, J: r * J)

    def level(self, y):
        y = np.atleast_2d(y)
        return np.sum((y - self.center) ** 2, axis=1) - self.radius ** 2

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def _unit_point(self, x0):
        return (x0 - self.center) / self.radius

    def exit_radius(self, x0, om, kind):
        if kind == "euclidean" or self.group.is_euclidean:
            d = x0 - self.center
            b = om @ d
            cc = float(d @ d) - self.radius ** 2
            disc = np.maximum(b * b - cc, 0.0)
            return np.maximum(-b + np.sqrt(disc), 0.0)
        return _exit_radius_numeric(self, x0, om, kind)

    def volume_rule(self, order=None):
        order = order or self.order
        if order not in self._volume_cache:
            smap = SphereMap.euclidean(self.N)
            om, wa = smap.angular_rule(order)
            x, w = gl_nodes(0.0, self.radius, order)
            pts = self.center + x[None, :, None] * om[:, None, :]
            W = wa[:, None] * w[None, :] * x[None, :] ** (self.N - 1)
            self._volume_cache[order] = (pts.reshape(-1, self.N), W.ravel())
        return self._volume_cache[order]

    def spherical_polar_rule(self, x0, order=None, singular=True, excision=None):
        """N = 3 polar rule around x0 in spherical angles about the axis toward the centre.

        Handles x0 on the sphere (rays fill a hemisphere, R = 2 r cos(phi)).
        """
        if self.N != 3 or not self.group.is_euclidean:
            raise GeometryError("spherical polar rule is implemented for Euclidean balls in R^3")
        order = order or self.order
        x0 = np.asarray(x0, float)
        d = self.center - x0
        dist = np.linalg.norm(d)
        e3 = d / dist if dist > 1e-14 else np.array([0.0, 0.0, 1.0])
        tmp = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = tmp - (tmp @ e3) * e3
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(e3, e1)
        on_boundary = abs(dist - self.radius) < 1e-12 * max(1.0, self.radius)
        phi_hi = 0.5 * np.pi if on_boundary else np.pi
        phi, wphi = gl_nodes(0.0, phi_hi, order)
        nth = 2 * order
        th = 2 * np.pi * (np.arange(nth) + 0.5) / nth
        wth = np.full(nth, 2 * np.pi / nth)
        P, T = np.meshgrid(phi, th, indexing="ij")
        WA = np.outer(wphi * np.sin(phi), wth).ravel()
        om = (np.cos(P).ravel()[:, None] * e3 + np.sin(P).ravel()[:, None]
              * (np.cos(T).ravel()[:, None] * e1 + np.sin(T).ravel()[:, None] * e2))
        R = self.exit_radius(x0, om, "euclidean")
        tau, tw = _radial_fractions(order, singular, excision)
        rho = R[:, None] * tau[None, :]
        pts = x0 + rho[..., None] * om[:, None, :]
        W = WA[:, None] * (R[:, None] * tw[None, :]) * rho ** 2
        return pts.reshape(-1, 3), W.ravel()


class GaugeBall(_CubeSphereDomain):
    """{d(c^{-1} o y) < r} for a group with a builtin gauge."""

    kind = "gauge_ball"

    def __init__(self, group, center, radius, order=DEFAULT_ORDER):
        super().__init__(group, center, float(radius), order)
        self.gauge = group.gauge()
        g, r, c = group, self.radius, self.center
        self._cinv = g.inverse(c)

        def to_b(om):
            return g.multiply(c, g.dilate(om, r))

        def to_b_jac(om, J):
            z = g.dilate(om, r)
            L = g.left_jacobian(c, z)
            DJ = (r ** g.weights)[None, :, None] * J
            return np.einsum("mij,mjk->mik", L, DJ)

        self._build_patches(SphereMap.gauge(group), to_b, to_b_jac)

    def level(self, y):
        y = np.atleast_2d(y)
        g = self.group
        return self.gauge.d(g.multiply(self._cinv, y)) - self.radius

    def bounding_box(self):
        pts = self.surface_rule(8).y
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        pad = 0.02 * (hi - lo) + 1e-9
        return lo - pad, hi + pad

    def _unit_point(self, x0):
        g = self.group
        return g.dilate(g.multiply(self._cinv, x0), 1.0 / self.radius)

    def exit_radius(self, x0, om, kind):
        if kind == "group" and np.allclose(x0, self.center, atol=1e-15):
            return np.full(om.shape[0], self.radius)
        return _exit_radius_numeric(self, x0, om, kind)

    def volume_rule(self, order=None):
        order = order or self.order
        if order not in self._volume_cache:
            self._volume_cache[order] = self.polar_rule(self.center, order)
        return self._volume_cache[order]


class Box(AdmissibleDomain):
    """Axis-aligned box c +- h, boundary made of 2N flat faces."""

    kind = "box"

    def __init__(self, group, center, half_widths, order=DEFAULT_ORDER):
        super().__init__(group, center, None, order)
        self.half = np.broadcast_to(np.asarray(half_widths, float), (self.N,)).copy()
        N = self.N
        for axis in range(N):
            others = [i for i in range(N) if i != axis]
            lo = self.center[others] - self.half[others]
            hi = self.center[others] + self.half[others]
            for sign in (-1.0, 1.0):
                val = self.center[axis] + sign * self.half[axis]
                chart = (lambda U, a=axis, v=val: _face_embed(U, a, 0.0, N) + v * np.eye(N)[a])
                E = _face_select(axis, N)
                jac = (lambda U, E=E: np.broadcast_to(E, (U.shape[0],) + E.shape).copy())
                P = BoundaryPatch(lo, hi, chart, jac, 1, order, name=f"face{'-+'[sign > 0]}{axis}")
                n = cofactor_normal(P.jac(np.zeros((1, N - 1))))[0]
                P.orientation = 1 if n[axis] * sign > 0 else -1
                self.patches.append(P)

    def describe(self):
        d = super().describe()
        d["half_widths"] = self.half.tolist()
        return d

    def level(self, y):
        y = np.atleast_2d(y)
        return np.max(np.abs(y - self.center) / self.half, axis=1) - 1.0

    def bounding_box(self):
        return self.center - self.half, self.center + self.half

    def locate(self, x0):
        x0 = np.asarray(x0, float)
        rel = (x0 - self.center) / self.half
        axis = int(np.argmax(np.abs(rel)))
        sign = 1.0 if rel[axis] > 0 else -1.0
        return 2 * axis + (1 if sign > 0 else 0), np.delete(x0, axis)

    def volume_rule(self, order=None):
        order = order or self.order
        if order not in self._volume_cache:
            U, W = tensor_rule(self.center - self.half, self.center + self.half, order)
            self._volume_cache[order] = (U, W)
        return self._volume_cache[order]

    def polar_rule(self, *a, **k):
        raise GeometryError("singular volume integration needs a smooth star-shaped domain")


class PatchDomain(AdmissibleDomain):
    """Boundary given by polynomial charts; volume by a polynomial map of [-1, 1]^N."""

    kind = "patches"

    def __init__(self, group, patches, volume_map=None, center=None, order=DEFAULT_ORDER,
                 level_fn=None):
        super().__init__(group, center if center is not None else np.zeros(group.N), None, order)
        self.patches = list(patches)
        self.volume_map = volume_map  # list of N Poly in N vars
        self._level_fn = level_fn

    def level(self, y):
        if self._level_fn is None:
            raise GeometryError("patch domain has no membership test")
        return self._level_fn(np.atleast_2d(y))

    def bounding_box(self):
        pts = self.surface_rule(8).y
        return pts.min(axis=0), pts.max(axis=0)

    def volume_rule(self, order=None):
        if self.volume_map is None:
            raise GeometryError("patch domain has no volume map")
        order = order or self.order
        if order not in self._volume_cache:
            N = self.N
            U, W = tensor_rule(-np.ones(N), np.ones(N), order)
            pts = np.stack([p(U) for p in self.volume_map], axis=1)
            J = np.stack([np.stack([p.deriv(j)(U) for j in range(N)], axis=1) for p in self.volume_map], axis=1)
            self._volume_cache[order] = (pts, W * np.abs(np.linalg.det(J)))
        return self._volume_cache[order]

    def locate(self, x0):
        best = None
        for i, P in enumerate(self.patches):
            U, _ = P.rule(8)
            dist = np.linalg.norm(P.chart(U) - x0, axis=1)
            j = int(np.argmin(dist))
            if best is None or dist[j] < best[0]:
                best = (dist[j], i, U[j])
        _, i, u = best
        P = self.patches[i]
        for _ in range(30):  # Gauss-Newton on the chart
            r = P.chart(u[None])[0] - x0
            J = P.jac(u[None])[0]
            step = np.linalg.lstsq(J, r, rcond=None)[0]
            u = u - step
            if np.linalg.norm(step) < 1e-15:
                break
        return i, u


def poly_patch(lo, hi, chart_polys, orientation=1, order=DEFAULT_ORDER, name=""):
    dim = len(lo)
    grads = [[p.deriv(j) for j in range(dim)] for p in chart_polys]
    chart = lambda U: np.stack([p(U) for p in chart_polys], axis=1)
    jac = lambda U: np.stack([np.stack([g(U) for g in row], axis=1) for row in grads], axis=1)
    return BoundaryPatch(lo, hi, chart, jac, orientation, order, name=name)


# ---------------------------------------------------------------------------
# integration


def _finite(vals, what):
    vals = np.asarray(vals, float)
    if not np.all(np.isfinite(vals)):
        raise SingularityError(f"non-finite {what} at {int(np.sum(~np.isfinite(vals)))} node(s)")
    return vals


def volume_integrate(dom: AdmissibleDomain, integrand, singularity=None, order=None,
                     estimate=True, excision=1e-3) -> QuadratureResult:
    """Integral over dom against Haar (= Lebesgue) measure.

    With a singularity x0 the rule is polar around x0; the inner ball of
    relative radius ``excision`` (and half of it) is dropped and the two
    results are Richardson-combined with the rho^2 excision law.
    """
    order = order or dom.order

    def plain(n):
        pts, w = dom.volume_rule(n)
        return float(np.sum(w * _finite(integrand(pts), "integrand"))), len(w)

    def singular(n):
        x0 = np.asarray(singularity, float)
        vals = []
        used = 0
        for ex in (excision, excision / 2):
            pts, w = dom.polar_rule(x0, n, singular=True, excision=ex)
            vals.append(float(np.sum(w * _finite(integrand(pts), "integrand"))))
            used += len(w)
        return (4 * vals[1] - vals[0]) / 3, used

    run = plain if singularity is None else singular
    value, used = run(order)
    err = 0.0
    if estimate:
        coarse, used2 = run(max(2, (3 * order) // 4))
        err = abs(value - coarse)
        used += used2
    return QuadratureResult(value, err, used)


def _covector(rule, group, k=None, w=None):
    dens = rule.densities(group)
    if k is not None:
        return dens[:, k]
    W = np.asarray(w(rule.y), float) if callable(w) else np.asarray(w, float)
    return np.einsum("mk,mk->m", W, dens)


def surface_integrate_form(dom: AdmissibleDomain, phi, k=None, w=None, order=None,
                           estimate=True) -> QuadratureResult:
    """int phi <X_k, dnu>, or int phi sum_k w_k <X_k, dnu> for a covector field w."""
    if (k is None) == (w is None):
        raise ValueError("give exactly one of k or w")
    order = order or dom.order

    def run(n):
        rule = dom.surface_rule(n)
        ph = np.ones(rule.size) if phi is None else _finite(phi(rule.y), "integrand")
        return float(np.sum(rule.w * ph * _covector(rule, dom.group, k, w))), rule.size

    value, used = run(order)
    err = 0.0
    if estimate:
        coarse, u2 = run(max(2, (3 * order) // 4))
        err = abs(value - coarse)
    return QuadratureResult(value, err, used)


def perimeter_parts(rule: SurfaceRule, group: CarnotGroup):
    """Euclidean unit normal (null vector of J^T), Gram area density, horizontal normal."""
    J = rule.jac
    # null space of J^T via SVD: last left singular vector
    Uu, s, _ = np.linalg.svd(J, full_matrices=True)
    v = Uu[:, :, -1]
    gram = np.sqrt(np.abs(np.linalg.det(np.einsum("mik,mil->mkl", J, J))))
    # orient v outward: the signed weight carries the patch orientation
    sgn = np.sign(np.linalg.det(np.concatenate([v[:, :, None], J], axis=2)))
    v = v * (sgn * np.sign(rule.w))[:, None]
    vH = np.einsum("mkj,mj->mk", group.fields(rule.y), v)  # <v, X_k>_E
    return v, gram, vH


def surface_integrate_perimeter(dom: AdmissibleDomain, j, phi, order=None,
                                estimate=True) -> QuadratureResult:
    """int phi |v_H|_j dsigma_H with dsigma_H = |v_H| dS."""
    order = order or dom.order

    def run(n):
        rule = dom.surface_rule(n)
        v, gram, vH = perimeter_parts(rule, dom.group)
        norm_vH = np.linalg.norm(vH, axis=1)
        small = norm_vH < 1e-12
        safe = np.where(small, 1.0, norm_vH)
        comp = np.where(small, vH[:, j], (vH[:, j] / safe) * norm_vH)
        ph = np.ones(rule.size) if phi is None else phi(rule.y)
        return float(np.sum(np.abs(rule.w) * gram * comp * ph)), rule.size

    value, used = run(order)
    err = 0.0
    if estimate:
        coarse, _ = run(max(2, (3 * order) // 4))
        err = abs(value - coarse)
    return QuadratureResult(value, err, used)


def detect_characteristic_points(dom: AdmissibleDomain, resolution=21, threshold=CHAR_THRESHOLD):
    """Grid points where every horizontal field is tangent to the boundary."""
    found = []
    seen = set()
    g = dom.group
    for i, P in enumerate(dom.patches):
        axes = [np.linspace(P.lo[a], P.hi[a], resolution) for a in range(len(P.lo))]
        U = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(P.lo))
        y = P.chart(U)
        n = cofactor_normal(P.jac(U))
        nn = np.linalg.norm(n, axis=1)
        vh = np.abs(np.einsum("mkj,mj->mk", g.fields(y), n))
        hit = np.max(vh, axis=1) < threshold * nn
        for u, p in zip(U[hit], y[hit]):
            key = tuple(np.round(p, 9))
            if key not in seen:
                seen.add(key)
                found.append((i, u, p))
    return found


# ---------------------------------------------------------------------------
# near-singular surface rules


@dataclass
class LocalFrame:
    patch: int
    u0: np.ndarray
    x0: np.ndarray
    A: np.ndarray        # (2, 2) parameter frame
    e: int               # anisotropy exponent of the second direction
    a: float             # quasi-disk radius
    characteristic: bool

    def to_param(self, s, t):
        v = np.stack([s * np.cos(t), s ** self.e * np.sin(t)], axis=-1)
        return self.u0 + v @ self.A.T

    def polar_of(self, U):
        """(s, theta) of parameter points."""
        v = (np.atleast_2d(U) - self.u0) @ np.linalg.inv(self.A).T
        if self.e == 1:
            s = np.linalg.norm(v, axis=1)
            return s, np.arctan2(v[:, 1], v[:, 0])
        v1, v2 = v[:, 0] ** 2, v[:, 1] ** 2
        s = np.sqrt(0.5 * (v1 + np.sqrt(v1 * v1 + 4 * v2)))
        return s, np.arctan2(v[:, 1] / s ** 2, v[:, 0] / s)

    def jac_factor(self, s, t):
        return abs(np.linalg.det(self.A)) * s ** self.e * (np.cos(t) ** 2 + self.e * np.sin(t) ** 2)

    def disk_edge(self, phi):
        """Distance from u0 along the straight direction phi to the quasi-circle s = a."""
        c = np.stack([np.cos(phi), np.sin(phi)], axis=-1) @ np.linalg.inv(self.A).T
        if self.e == 1:
            return self.a / np.linalg.norm(c, axis=-1)
        a = self.a
        return a * a / np.sqrt(a * a * c[..., 0] ** 2 + c[..., 1] ** 2)


def local_frame(dom: AdmissibleDomain, x0, disk=0.5, tol=1e-8) -> LocalFrame:
    """Foot patch and quasi-polar frame at a boundary point.

    The first frame direction is horizontal and tangent; the second is
    scaled like s^2 when it is not horizontal, so that level sets of s
    look like gauge spheres around x0.
    """
    if dom.N != 3:
        raise GeometryError("singular surface quadrature is implemented for N = 3")
    i, u0 = dom.locate(x0)
    P = dom.patches[i]
    x0p = P.chart(u0[None])[0]
    J = P.jac(u0[None])[0]
    V = dom.group.fields(x0p[None])[0].T            # (N, N1)
    Qh, _ = np.linalg.qr(V)
    Mx = J - Qh @ (Qh.T @ J)                          # non-horizontal part of tangents
    _, sv, Vt = np.linalg.svd(Mx)
    scale = max(np.linalg.norm(J), 1e-300)
    n_horiz = int(np.sum(sv < tol * scale))
    if n_horiz >= 2:
        A = np.linalg.cholesky(np.linalg.inv(J.T @ J))
        frame = LocalFrame(i, u0, x0p, A, 1, disk, not dom.group.is_euclidean)
    else:
        B = np.stack([Vt[-1], Vt[0]], axis=1)
        a1 = B[:, 0] / np.linalg.norm(J @ B[:, 0])
        t1 = J @ a1
        t2 = J @ B[:, 1]
        a2 = B[:, 1] - ((t2 @ t1) / (t1 @ t1)) * a1
        a2 = a2 / np.linalg.norm(J @ a2)
        frame = LocalFrame(i, u0, x0p, np.stack([a1, a2], axis=1), 2, disk, False)
    th = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    span = float(np.min(P.hi - P.lo))
    for _ in range(80):
        U = frame.to_param(np.full_like(th, frame.a), th)
        if np.all(P.contains_param(U, margin=0.02 * span)):
            return frame
        frame.a *= 0.85
    raise GeometryError("target point too close to a patch seam")


def _exit_r(u0, P: BoundaryPatch, phi):
    """Straight-ray distance from u0 to the patch box boundary."""
    d = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    best = np.full(len(phi), np.inf)
    for i in range(2):
        for bound in (P.lo[i], P.hi[i]):
            with np.errstate(divide="ignore", invalid="ignore"):
                r = (bound - u0[i]) / d[:, i]
            best = np.minimum(best, np.where(r > 0, r, np.inf))
    return best


def _corner_angles(u0, P: BoundaryPatch):
    corners = np.array([[P.lo[0], P.lo[1]], [P.hi[0], P.lo[1]], [P.hi[0], P.hi[1]], [P.lo[0], P.hi[1]]])
    ang = np.sort(np.mod(np.arctan2(corners[:, 1] - u0[1], corners[:, 0] - u0[0]), 2 * np.pi))
    return np.concatenate([ang, [ang[0] + 2 * np.pi]])


def _log_panels(lo, hi, n, ratio=4.0):
    """Geometric panels from lo > 0 to hi, row by row (same count per row)."""
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.broadcast_to(np.asarray(hi, float), lo.shape)
    npan = max(1, int(math.ceil(math.log(float(np.max(hi / lo))) / math.log(ratio))))
    edges = lo[:, None] * (hi / lo)[:, None] ** (np.arange(npan + 1)[None, :] / npan)
    xs, ws = gl_nodes(edges[:, :-1], edges[:, 1:], n)
    return xs.reshape(len(lo), -1), ws.reshape(len(lo), -1)


def _patch_polar_rule(dom, frame: LocalFrame, n_theta, radial_order, floor=None,
                      exclude_rho=None):
    """Containing patch = quasi-disk s <= a (quasi-polar) + the ring out to the patch edge.

    The ring uses straight rays from u0 split at the corner directions, so
    both pieces are exact parametrisations and no blending is needed.
    """
    P = dom.patches[frame.patch]
    # quasi-disk, trapezoid in theta (periodic integrand)
    nt = 4 * n_theta
    th = 2 * np.pi * (np.arange(nt) + 0.5) / nt
    wth = np.full(nt, 2 * np.pi / nt)
    a = np.full(nt, frame.a)
    if exclude_rho is not None:
        lo = _excision_radius(dom, frame, th, exclude_rho)
        Sx, Ws = _log_panels(lo, a, radial_order)
    else:
        fl = np.full(nt, min(floor, 0.5 * frame.a))
        S1, W1 = _log_panels(fl, a, radial_order)
        S0, W0 = gl_nodes(np.zeros(nt), fl, radial_order)
        Sx = np.concatenate([S0, S1], axis=1)
        Ws = np.concatenate([W0, W1], axis=1)
    T = np.broadcast_to(th[:, None], Sx.shape)
    U_in = frame.to_param(Sx.ravel(), T.ravel())
    w_in = (Ws * wth[:, None] * frame.jac_factor(Sx, T)).ravel()
    # ring, straight rays
    edges = _corner_angles(frame.u0, P)
    phs, wphs = [], []
    for lo_, hi_ in zip(edges[:-1], edges[1:]):
        if hi_ - lo_ < 1e-12:
            continue
        p, w = gl_nodes(lo_, hi_, n_theta)
        phs.append(p)
        wphs.append(w)
    ph = np.concatenate(phs)
    wph = np.concatenate(wphs)
    rE = frame.disk_edge(ph)
    rB = _exit_r(frame.u0, P, ph)
    R, WR = _log_panels(rE, rB, radial_order, ratio=3.0)
    Ph = np.broadcast_to(ph[:, None], R.shape)
    U_out = frame.u0 + np.stack([R * np.cos(Ph), R * np.sin(Ph)], axis=-1).reshape(-1, 2)
    w_out = (WR * R * wph[:, None]).ravel()
    U = np.clip(np.concatenate([U_in, U_out]), P.lo, P.hi)
    w = np.concatenate([w_in, w_out])
    return SurfaceRule(P.chart(U), P.jac(U), w * P.orientation, np.full(len(w), frame.patch))


def _neighbour_rules(dom, skip, target, order, max_panels=6):
    """Other patches with panel counts growing as the target gets close."""
    parts = []
    for i, P in enumerate(dom.patches):
        if i == skip:
            continue
        U0, _ = P.rule(6)
        pts = P.chart(U0)
        size = float(np.max(np.linalg.norm(pts - pts.mean(axis=0), axis=1))) * 2
        dist = float(np.min(np.linalg.norm(pts - target, axis=1)))
        panels = int(np.clip(math.ceil(0.8 * size / max(dist, 1e-3)), 1, max_panels))
        U, W = P.rule(order, panels)
        parts.append(SurfaceRule(P.chart(U), P.jac(U), W * P.orientation, np.full(len(W), i)))
    return parts


def near_field_rule(dom: AdmissibleDomain, frame: LocalFrame, order=None, n_theta=None,
                    exclude_rho=None, offset=None, radial_order=8, floor=None,
                    max_panels=6) -> SurfaceRule:
    """Surface rule for a kernel singular (or nearly so) at the frame's foot point.

    exclude_rho: drop the gauge ball d(x0, y) < rho (principal values).
    offset: distance of an off-surface target; sets the finest radial scale.
    floor: innermost radial scale for on-surface targets.
    max_panels: cap on the panel refinement of neighbouring patches.
    """
    order = order or dom.order
    n_theta = n_theta or 4 * order
    if floor is None:
        floor = 1e-7 if offset is None else max(offset / 16.0, 1e-10)
    own = _patch_polar_rule(dom, frame, n_theta, radial_order, floor=floor,
                            exclude_rho=exclude_rho)
    return SurfaceRule.concat([own] + _neighbour_rules(dom, frame.patch, frame.x0, order,
                                                       max_panels))


def _excision_radius(dom, frame, th, rho, iters=60):
    """s(theta) where the gauge distance to x0 first reaches rho."""
    P = dom.patches[frame.patch]
    g = dom.group
    x0inv = g.inverse(frame.x0)
    gauge_d = g.gauge().d if g.spec.gauge is not None else (lambda w: np.linalg.norm(w, axis=1))

    def dist(s):
        return gauge_d(g.multiply(x0inv, P.chart(frame.to_param(s, th))))

    hi = np.full_like(th, frame.a)
    if np.any(dist(hi) <= rho):
        raise PVDivergenceError("excision ball does not fit inside the local disk")
    lo = np.zeros_like(th)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        inside = dist(mid) < rho
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def gauge_foot(dom: AdmissibleDomain, x, patch=None, u_start=None, hops=3):
    """Boundary point minimising the gauge distance to an off-surface target x.

    For step-2 groups this is not the Euclidean foot: the group law's cross
    terms shift the kernel peak along the vertical tangent direction.  The
    search runs in the quasi-polar frame of the Euclidean foot, where the
    distance is roughly isotropic.  Returns (patch, parameter, point, distance).
    """
    from scipy.optimize import minimize

    g = dom.group
    x = np.asarray(x, float)
    if patch is None:
        patch, u_start = dom.locate(x)
    P = dom.patches[patch]
    # a start point on a seam has no single-patch frame; the search may still reach the seam
    pad = 0.1 * (P.hi - P.lo)
    u_start = np.clip(np.asarray(u_start, float), P.lo + pad, P.hi - pad)
    frame = local_frame(dom, P.chart(u_start[None])[0])
    if g.is_euclidean or g.spec.gauge is None:
        dist_fn = lambda y: np.linalg.norm(y - x, axis=1)
    else:
        G = g.gauge()
        xinv = g.inverse(x)
        dist_fn = lambda y: G.d(g.multiply(xinv, y))
    s = np.concatenate([[0.0], np.geomspace(1e-5, frame.a, 60)])
    th = np.linspace(0, 2 * np.pi, 96, endpoint=False)
    S, T = np.meshgrid(s, th, indexing="ij")
    U = np.clip(frame.to_param(S.ravel(), T.ravel()), P.lo, P.hi)
    vals = dist_fn(P.chart(U))
    k = int(np.argmin(vals))
    s0 = max(S.ravel()[k], 1e-6)
    Ainv = np.linalg.inv(frame.A)
    v0 = (U[k] - frame.u0) @ Ainv.T

    def fun(v):
        u = np.clip(frame.u0 + frame.A @ v, P.lo, P.hi)
        return float(dist_fn(P.chart(u[None]))[0])

    simplex = np.array([v0, v0 + [0.25 * s0, 0], v0 + [0, 0.25 * s0 ** frame.e]])
    res = minimize(fun, v0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "xatol": 1e-15, "fatol": 1e-18,
                            "maxiter": 4000})
    v = res.x if res.fun <= vals[k] else v0
    u = np.clip(frame.u0 + frame.A @ v, P.lo, P.hi)
    y = P.chart(u[None])[0]
    on_edge = np.any(np.isclose(u, P.lo, atol=1e-9) | np.isclose(u, P.hi, atol=1e-9))
    if on_edge and hops > 0:
        # the minimiser ran into a seam: continue in the patch that owns y
        j, uj = dom.locate(y)
        if j != patch:
            Pj = dom.patches[j]
            pad = 0.1 * (Pj.hi - Pj.lo)
            alt = gauge_foot(dom, x, j, np.clip(uj, Pj.lo + pad, Pj.hi - pad), hops - 1)
            if alt[3] <= float(dist_fn(y[None])[0]):
                return alt
    return patch, u, y, float(dist_fn(y[None])[0])


def fit_power_limit(xs, vals, min_gamma=0.1, max_rel_residual=0.1, noise=1e-9):
    """Fit v(x) = a + b x^gamma through three points on a halving ladder; return (a, gamma, err)."""
    v1, v2, v3 = (float(v) for v in vals)
    d1, d2 = v1 - v2, v2 - v3
    spread = abs(v1 - v3)
    scale = max(abs(v1), abs(v2), abs(v3), 1.0)
    if spread <= noise * scale:
        return v3, float("inf"), spread
    if d2 == 0 or d1 / d2 <= 0:
        raise PVDivergenceError(f"non-monotone ladder {list(vals)}")
    ratio = xs[0] / xs[1]
    gamma = math.log(d1 / d2) / math.log(ratio)
    if gamma <= min_gamma:
        raise PVDivergenceError(f"fitted exponent {gamma:.3f} too small")
    a = v3 - d2 / (ratio ** gamma - 1.0)
    if abs(a - v3) > (1.0 / max_rel_residual) * spread:
        raise PVDivergenceError("extrapolation far outside the observed spread")
    return a, gamma, abs(a - v3)


def principal_value(dom: AdmissibleDomain, x0, kernel, rho0=None, order=None,
                    frame: LocalFrame | None = None) -> QuadratureResult:
    """PV of int kernel(rule) over the boundary, excising gauge balls d(x0, .) < rho.

    ``kernel(rule)`` returns the pulled-back density at the rule's nodes
    (without the quadrature weights).
    """
    frame = frame or local_frame(dom, x0)
    if rho0 is None:
        rho0 = _default_rho(dom, frame)
    rhos = [rho0, rho0 / 2, rho0 / 4, rho0 / 8]
    vals = []
    used = 0
    for rho in rhos:
        rule = near_field_rule(dom, frame, order, exclude_rho=rho)
        vals.append(float(np.sum(rule.w * kernel(rule))))
        used += rule.size
    # limit from the three smallest radii; the residual against the fit
    # through the three largest is the error estimate
    a, gamma, _ = fit_power_limit(rhos[1:], vals[1:])
    a_coarse, _, _ = fit_power_limit(rhos[:3], vals[:3])
    return QuadratureResult(a, abs(a - a_coarse), used)


def _default_rho(dom, frame):
    """A quarter of the gauge distance from x0 to the quasi-circle s = a."""
    g = dom.group
    P = dom.patches[frame.patch]
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    y = P.chart(frame.to_param(np.full_like(th, frame.a), th))
    rel = g.multiply(g.inverse(frame.x0), y)
    d = g.gauge().d(rel) if g.spec.gauge is not None else np.linalg.norm(rel, axis=1)
    return 0.25 * float(np.min(d))


# ---------------------------------------------------------------------------
# shipped domains / JSON


def euclidean_ball(group, center=None, radius=1.0, order=DEFAULT_ORDER):
    center = np.zeros(group.N) if center is None else center
    return EuclideanBall(group, center, radius, order)


def gauge_ball(group, center=None, radius=1.0, order=DEFAULT_ORDER):
    center = np.zeros(group.N) if center is None else center
    return GaugeBall(group, center, radius, order)


def box(group, center=None, half_widths=1.0, order=DEFAULT_ORDER):
    center = np.zeros(group.N) if center is None else center
    return Box(group, center, half_widths, order)


def domain_from_json(data, group) -> AdmissibleDomain:
    kind = data.get("kind")
    center = data.get("center")
    order = int(data.get("order", DEFAULT_ORDER))
    if center is not None and len(center) != group.N:
        raise GeometryError("domain centre has the wrong dimension")
    if kind == "euclidean_ball":
        return euclidean_ball(group, center, float(data.get("radius", 1.0)), order)
    if kind == "gauge_ball":
        return gauge_ball(group, center, float(data.get("radius", 1.0)), order)
    if kind == "box":
        return box(group, center, data.get("half_widths", data.get("radius", 1.0)), order)
    if kind == "patches":
        dim = group.N - 1
        unames = [f"u{i + 1}" for i in range(dim)]
        patches = []
        for p in data["patches"]:
            polys = [Poly.from_json(c, unames) for c in p["chart"]]
            patches.append(poly_patch(p["lo"], p["hi"], polys, p.get("orientation", 1),
                                      int((p.get("orders") or [order])[0])))
        vmap = None
        if data.get("volume_map"):
            vnames = [f"v{i + 1}" for i in range(group.N)]
            vmap = [Poly.from_json(c, vnames) for c in data["volume_map"]]
        return PatchDomain(group, patches, vmap, center, order)
    raise GeometryError(f"unknown domain kind {kind!r}")


DOMAIN_SCHEMAS = {
    "euclidean_ball": {"center": "list[N] (default origin)", "radius": "float", "order": "int"},
    "gauge_ball": {"center": "list[N] (default origin)", "radius": "float", "order": "int",
                   "requires": "builtin gauge"},
    "box": {"center": "list[N]", "half_widths": "float or list[N]", "order": "int"},
    "patches": {"patches": "[{lo, hi, chart: [poly per coordinate in u1..], orientation, orders}]",
                "volume_map": "optional [poly per coordinate in v1..vN] on [-1,1]^N"},
}
