"""Identity experiments: every integral identity or inequality becomes a residual.

Each experiment evaluates both sides of an identity by quadrature at a
ladder of resolutions and returns a VerificationReport.  Inequalities report
their deficit max(0, rhs - lhs) as the residual.

Conventions shared with ``potentials``: eps(y, x) is differentiated in y,
boundary forms <X_k, dnu> are pulled back with signed patch weights, and
sum_k (X_k g) <X_k, dnu> is written flux(g).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import potentials as pot
from .errors import (CapabilityError, CarnotError, ParameterError, PreconditionError,
                     SupportError, UnsupportedDimensionError)
from .functions import TestFunction, constant, exp_decay
from .oracle import fd_sublaplacian

# residuals below this are treated as converged when checking refinement rates
HALVING_FLOOR = 1e-10
PRECONDITION_TOL = 1e-10


@dataclass
class VerificationReport:
    experiment: str
    inputs: dict
    residuals: dict
    tolerances: dict
    passed: bool
    refinement_history: list
    values: dict = field(default_factory=dict)

    @property
    def digest(self) -> str:
        blob = json.dumps(_clean(self.inputs), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def worst(self):
        """(name, residual, tolerance) with the largest residual/tolerance ratio."""
        best = None
        for k, r in self.residuals.items():
            t = self.tolerances.get(k, 0.0)
            ratio = math.inf if not np.isfinite(r) else (r / t if t > 0 else (0.0 if r <= 0 else math.inf))
            if best is None or ratio > best[0]:
                best = (ratio, k, r, t)
        if best is None:
            return "", 0.0, 0.0
        return best[1], best[2], best[3]

    def to_json(self) -> dict:
        return _clean({
            "experiment": self.experiment,
            "inputs": self.inputs,
            "inputs_digest": self.digest,
            "residuals": self.residuals,
            "tolerances": self.tolerances,
            "passed": self.passed,
            "refinement_history": [list(h) for h in self.refinement_history],
            "values": self.values,
        })


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def make_report(experiment, inputs, residuals, tolerances, history, values=None,
                tol=None, tol_scale=1.0) -> VerificationReport:
    tols = {k: float(v) * tol_scale for k, v in tolerances.items()}
    if tol is not None:
        if isinstance(tol, dict):
            tols.update({k: float(v) for k, v in tol.items()})
        else:
            tols = {k: float(tol) for k in tols}
    res = {k: float(v) for k, v in residuals.items()}
    passed = all(np.isfinite(res[k]) and res[k] <= tols.get(k, 0.0) for k in res)
    return VerificationReport(experiment, inputs, res, tols, bool(passed),
                              [(int(n), float(r)) for n, r in history], values or {})


def ladder(order, levels=3):
    """Quadrature orders for a refinement history: order / 2^(levels-1), ..., order."""
    return [max(2, int(order) >> k) for k in range(levels - 1, -1, -1)]


def halving_rate(history, floor=HALVING_FLOOR):
    """Smallest ratio r_{k}/r_{k+1}; pairs already below the floor count as converged."""
    rates = []
    for (_, a), (_, b) in zip(history[:-1], history[1:]):
        if a <= floor:
            continue
        rates.append(math.inf if b <= floor else a / b)
    return min(rates) if rates else math.inf


def _describe_fn(f):
    if f is None:
        return None
    if isinstance(f, TestFunction):
        return f.name
    return repr(f)


def _group_tol(group, euclidean, other):
    return euclidean if group.is_euclidean else other


# ---------------------------------------------------------------------------
# quadrature helpers


def _volume(dom, order, about=None, panels=1, depth=12):
    if about is not None:
        return dom.polar_rule(np.asarray(about, float), order, singular=True, panels=panels,
                              depth=depth)
    if panels > 1 and isinstance(dom, (geo.EuclideanBall, geo.GaugeBall)):
        return dom.polar_rule(dom.center, order, panels=panels)
    return dom.volume_rule(order)


def _flux(group, f, rule, dens=None):
    dens = rule.densities(group) if dens is None else dens
    return np.einsum("mk,mk->m", group.horizontal_gradient(f, rule.y), dens)


def _hsq(group, f, pts):
    gr = group.horizontal_gradient(f, pts)
    return np.einsum("mk,mk->m", gr, gr)


def _scale(*arrays):
    return max([1.0] + [float(np.max(np.abs(a))) for a in arrays if np.size(a)])


# ---------------------------------------------------------------------------
# divergence and Green formulas


def divergence_residual(dom, fields, order=None, levels=3, tol=None, tol_scale=1.0):
    """|int X_k f_k dnu - int f_k <X_k, dnu>| for each k, and for the sum over k."""
    g = dom.group
    fields = list(fields)
    if len(fields) != g.N1:
        raise ParameterError(f"need {g.N1} field components, got {len(fields)}")
    order = order or dom.order
    history = []
    for n in ladder(order, levels):
        pts, w = _volume(dom, n)
        rule = dom.surface_rule(n)
        dens = rule.densities(g)
        vol = np.array([w @ g.apply_field(k, f, pts) for k, f in enumerate(fields)])
        surf = np.array([np.sum(rule.w * f.value(rule.y) * dens[:, k]) for k, f in enumerate(fields)])
        res = np.abs(vol - surf)
        total = abs(vol.sum() - surf.sum())
        history.append((n, max(float(res.max()), total)))
    t = _group_tol(g, 1e-6, 1e-4)
    residuals = {f"k{k + 1}": r for k, r in enumerate(res)}
    residuals["sum"] = total
    return make_report("divergence_residual",
                       {"domain": dom.describe(), "fields": [_describe_fn(f) for f in fields],
                        "order": order},
                       residuals, {k: t for k in residuals}, history,
                       {"volume_side": vol.tolist(), "boundary_side": surf.tolist()},
                       tol, tol_scale)


def _green_sides(g, dom, u, v, which, n):
    pts, w = _volume(dom, n)
    rule = dom.surface_rule(n)
    dens = rule.densities(g)
    uy, vy = u.value(rule.y), v.value(rule.y)
    if which == "first":
        gu = g.horizontal_gradient(u, pts)
        gv = g.horizontal_gradient(v, pts)
        vol = w @ (np.einsum("mk,mk->m", gu, gv) + v.value(pts) * g.sub_laplacian(u, pts))
        surf = np.sum(rule.w * vy * _flux(g, u, rule, dens))
    elif which == "second":
        vol = w @ (u.value(pts) * g.sub_laplacian(v, pts) - v.value(pts) * g.sub_laplacian(u, pts))
        surf = np.sum(rule.w * (uy * _flux(g, v, rule, dens) - vy * _flux(g, u, rule, dens)))
    else:
        raise ParameterError(f"which must be 'first' or 'second', got {which!r}")
    return float(vol), float(surf)


def green_residual(dom, u, v, which="first", order=None, levels=3, tol=None, tol_scale=1.0):
    g = dom.group
    order = order or dom.order
    history = []
    for n in ladder(order, levels):
        vol, surf = _green_sides(g, dom, u, v, which, n)
        history.append((n, abs(vol - surf)))
    t = _group_tol(g, 1e-5, 1e-3)
    return make_report(f"green_residual:{which}",
                       {"domain": dom.describe(), "u": _describe_fn(u), "v": _describe_fn(v),
                        "which": which, "order": order},
                       {"residual": abs(vol - surf)}, {"residual": t}, history,
                       {"volume_side": vol, "boundary_side": surf}, tol, tol_scale)


# ---------------------------------------------------------------------------
# mean value and representation formulas


def mean_value_check(fs, dom, x, order=None, levels=3, tol=None, tol_scale=1.0):
    """int <grad~ eps(., x), dnu> against 1 (x inside) or 0 (x outside)."""
    x = np.asarray(x, float)
    lvl = float(dom.level(x[None])[0])
    if abs(lvl) < 1e-10:
        raise PreconditionError("mean value check needs x off the boundary")
    target = 1.0 if lvl < 0 else 0.0
    order = order or dom.order
    history = []
    for n in ladder(order, levels):
        val = pot._double_off(fs, dom, None, x, order=n)
        history.append((n, abs(val - target)))
    return make_report("mean_value_check",
                       {"domain": dom.describe(), "x": x.tolist(), "order": order},
                       {"residual": abs(val - target)}, {"residual": 1e-3}, history,
                       {"value": val, "target": target}, tol, tol_scale)


REPRESENTATION_VARIANTS = ("full", "harmonic", "dirichlet_zero", "neumann_zero")


def _representation_preconditions(g, dom, u, variant, n):
    if variant == "full":
        return
    rule = dom.surface_rule(n)
    pts, _ = _volume(dom, n)
    scale = _scale(u.value(pts))
    if variant == "harmonic":
        worst = float(np.max(np.abs(g.sub_laplacian(u, pts))))
        if worst > PRECONDITION_TOL * scale:
            raise PreconditionError(f"harmonic representation needs L u = 0 (max |L u| = {worst:.3e})")
    elif variant == "dirichlet_zero":
        worst = float(np.max(np.abs(u.value(rule.y))))
        if worst > PRECONDITION_TOL * scale:
            raise PreconditionError(
                f"zero-Dirichlet representation needs u = 0 on the boundary (max |u| = {worst:.3e})")
    elif variant == "neumann_zero":
        dens = rule.densities(g)
        worst = float(np.max(np.abs(_flux(g, u, rule, dens))))
        gscale = _scale(g.horizontal_gradient(u, pts)) * _scale(dens)
        if worst > PRECONDITION_TOL * gscale:
            raise PreconditionError(
                f"zero-Neumann representation needs flux(u) = 0 on the boundary (max = {worst:.3e})")


def representation_value(fs, dom, u, x, variant="full", order=None):
    """Right-hand side of the representation formula at an interior x.

    u(x) = int eps(., x) L u + int u <grad~ eps(., x), dnu> - int eps(., x) flux(u);
    the harmonic / zero-Dirichlet / zero-Neumann variants drop one term.
    """
    g = fs.group
    x = np.asarray(x, float)
    order = order or dom.order
    vol = 0.0
    if variant != "harmonic":
        vol = geo.volume_integrate(dom, lambda y: g.sub_laplacian(u, y) * fs.eps(y, x[None]),
                                   singularity=x, order=order, estimate=False).value
    rule = pot._layer_rule(dom, x, order=order)
    dl = 0.0
    if variant != "dirichlet_zero":
        dl = float(np.sum(rule.w * u.value(rule.y) * fs.double_layer_density(rule, x)))
    sl = 0.0
    if variant != "neumann_zero":
        sl = float(np.sum(rule.w * fs.eps(rule.y, x[None]) * _flux(g, u, rule)))
    return vol + dl - sl


def representation_residual(fs, dom, u, x, variant="full", order=None, levels=3, tol=None,
                            tol_scale=1.0):
    if variant not in REPRESENTATION_VARIANTS:
        raise ParameterError(f"unknown representation variant {variant!r}")
    x = np.asarray(x, float)
    if not dom.contains(x[None])[0]:
        raise PreconditionError("representation formulas need an interior point")
    g = fs.group
    order = order or dom.order
    _representation_preconditions(g, dom, u, variant, order)
    ux = float(u.value(x))
    history = []
    for n in ladder(order, levels):
        rhs = representation_value(fs, dom, u, x, variant, n)
        history.append((n, abs(ux - rhs)))
    t = _group_tol(g, 1e-3, 1e-2)
    return make_report(f"representation_residual:{variant}",
                       {"domain": dom.describe(), "u": _describe_fn(u), "x": x.tolist(),
                        "variant": variant, "order": order},
                       {"residual": abs(ux - rhs)}, {"residual": t}, history,
                       {"u": ux, "rhs": rhs}, tol, tol_scale)


# ---------------------------------------------------------------------------
# boundary points


def boundary_points(dom, n, seed=0, min_horizontal=0.3, margin=0.2):
    """n boundary points inside patch interiors, away from characteristic points.

    ``min_horizontal`` bounds |horizontal part of the normal| / |normal| from
    below; patches are visited round-robin.
    """
    rng = np.random.default_rng(seed)
    g = dom.group
    out = []
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > 200 * n:
            raise ParameterError("could not find enough non-characteristic boundary points")
        i = (len(out) + tries) % len(dom.patches)
        P = dom.patches[i]
        span = P.hi - P.lo
        u = P.lo + margin * span + (1 - 2 * margin) * span * rng.random(len(span))
        y = P.chart(u[None])
        nrm = geo.cofactor_normal(P.jac(u[None]))[0]
        nh = g.fields(y)[0] @ nrm
        if np.linalg.norm(nh) < min_horizontal * np.linalg.norm(nrm):
            continue
        out.append(y[0])
    return np.array(out)


# ---------------------------------------------------------------------------
# jump relations


def jump_order(dom):
    """Default order for the jump relations: off-surface ladders need a finer rule,
    and the non-Euclidean near rules are noisier."""
    return (2 if dom.group.is_euclidean else 3) * dom.order


def jump_relations_check(fs, dom, u, x0s, order=None, h0=0.01, tol=None, tol_scale=1.0):
    """D+ - D- = u, D0 - D- = J u, D+ - D0 = (1 - J) u at each boundary point.

    D+ / D- are the interior / exterior limits and D0 the on-boundary value.
    A failing limit or principal value is recorded for that point only.
    """
    x0s = np.atleast_2d(np.asarray(x0s, float))
    order = order or jump_order(dom)
    residuals = {}
    values = {"points": [], "failures": {}}
    worst = 0.0
    for p, x0 in enumerate(x0s):
        try:
            u0 = float(pot._vals(u, x0[None])[0])
            J = pot.jump_function(fs, dom, x0, order).value
            d0, _ = pot.double_layer_on_boundary(fs, dom, u, x0, order, J)
            dp = pot.double_layer_limit(fs, dom, u, x0, "interior_limit", h0, order)[0].value
            dm = pot.double_layer_limit(fs, dom, u, x0, "exterior_limit", h0, order)[0].value
            r = (abs(dp - dm - u0), abs(d0 - dm - J * u0), abs(dp - d0 - (1 - J) * u0))
            values["points"].append({"x0": x0.tolist(), "u": u0, "J": J, "D_plus": dp,
                                     "D_minus": dm, "D_zero": d0})
        except CarnotError as exc:
            r = (math.inf,) * 3
            values["failures"][str(p)] = f"{type(exc).__name__}: {exc}"
        for name, val in zip(("plus_minus", "zero_minus", "plus_zero"), r):
            residuals[f"p{p}_{name}"] = val
        worst = max(worst, *r)
    tols = {k: 1e-2 for k in residuals}
    return make_report("jump_relations_check",
                       {"domain": dom.describe(), "u": _describe_fn(u), "x0": x0s.tolist(),
                        "order": order, "h0": h0},
                       residuals, tols, [(order, worst)], values, tol, tol_scale)


# ---------------------------------------------------------------------------
# Kac boundary conditions


def _check_support(dom, f, margin):
    """f must vanish on a collar of relative width ``margin`` inside the boundary."""
    g = dom.group
    rule = dom.surface_rule(12)
    c = dom.center
    worst = 0.0
    for s in np.linspace(1.0 - margin, 1.0, 6):
        if not isinstance(dom, geo.GaugeBall) or g.is_euclidean:
            pts = c + s * (rule.y - c)
        else:
            rel = g.multiply(g.inverse(c), rule.y)
            pts = g.multiply(c, g.dilate(rel, s))
        worst = max(worst, float(np.max(np.abs(pot._vals(f, pts)))))
    if worst >= 1e-12:
        raise SupportError(f"source does not vanish within {margin:.0%} of the boundary "
                           f"(max |f| = {worst:.3e})")


def newton_traces(fs, dom, f, order):
    """trace(p, y) -> (L^p u, grad_G L^p u) at boundary points for u = N f (p = 0 only)."""

    def trace(p, y):
        if p != 0:
            raise CapabilityError("higher traces of a plain Newton potential are not available")
        return pot.newton_potential(fs, dom, f, np.atleast_2d(y), order, grad=True)

    return trace


def radial_traces(fs, dom, f, m, n=48):
    """Traces of L^p u, u = int f eps_m, for radial f on a Euclidean ball (R^N)."""
    prof = pot.radial_newton_profiles(fs, dom, f, m, n)
    c = dom.center

    def trace(p, y):
        y = np.atleast_2d(y)
        val, der = prof[m - p]
        rel = y - c
        r = np.linalg.norm(rel, axis=1)
        return val(r), (der(r) / r)[:, None] * rel

    return trace


def _fd_power(group, fn, x0, i, h):
    """L^i applied to a value-only function by nested finite differences."""
    if i == 0:
        return float(fn(x0[None])[0])
    cur = fn
    for _ in range(i):
        prev = cur
        cur = (lambda p: (lambda y: fd_sublaplacian(group, p, np.atleast_2d(y), h)))(prev)
    return float(cur(x0[None])[0])


def iterated_sphere_moments(ik, dom, x0, n_gamma=24):
    """(int eps_k(., x0) dS, int <grad eps_k(., x0), n> dS) over a sphere in R^3.

    By rotational symmetry about the axis through x0 both integrands depend
    only on the polar angle gamma, so the surface integral reduces to
    2 pi R^2 int_0^pi F(gamma) sin(gamma) d gamma.
    """
    if not (isinstance(dom, geo.EuclideanBall) and dom.N == 3 and dom.group.is_euclidean):
        raise CapabilityError("iterated-kernel boundary terms need a Euclidean ball in R^3")
    c, R = dom.center, dom.radius
    e3 = (x0 - c) / R
    tmp = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = tmp - (tmp @ e3) * e3
    e1 /= np.linalg.norm(e1)
    gam, wg = geo.gl_nodes(0.0, math.pi, n_gamma)
    S = D = 0.0
    for gm, wt in zip(gam, wg):
        nrm = math.cos(gm) * e3 + math.sin(gm) * e1
        y = c + R * nrm
        val, gr = ik.eval(y, x0, grad=True)
        S += wt * math.sin(gm) * val
        D += wt * math.sin(gm) * float(gr @ nrm)
    return 2 * math.pi * R * R * S, 2 * math.pi * R * R * D


def _kac_rule(dom, frame, order):
    # the subtracted integrands are bounded at x0, so no deep radial grading
    return geo.near_field_rule(dom, frame, order, n_theta=order,
                               radial_order=max(4, order // 2), floor=0.25 * frame.a,
                               max_panels=2)


def kac_condition(fs, dom, x0, m, i, trace, order, J=None, fd_h=None, kernels=None,
                  n_gamma=None):
    """Value of the i-th Kac boundary functional at x0 for u = int f eps_m.

    (1 - J) L^i u(x0) + sum_{j=0}^{m-i-1} [ int L^{j+i}u <grad~ eps_{j+1}(., x0), dnu>
                                          - int eps_{j+1}(., x0) flux(L^{j+i} u) ],
    using L^{m-1-j} eps_m = eps_{j+1}.  The j = 0 double layer is taken in the
    subtracted form int (g - g(x0)) K + J g(x0).  L^i u(x0) comes from nested
    finite differences of the trace of u.
    Returns (value, J, terms).
    """
    g = fs.group
    x0 = np.asarray(x0, float)
    frame = geo.local_frame(dom, x0)
    if J is None:
        J = pot.jump_function(fs, dom, x0, order, frame).value
    h = fd_h or 1e-3 * dom.diameter()
    lead = _fd_power(g, lambda y: trace(0, y)[0], x0, i, h)
    rule = _kac_rule(dom, frame, order)
    dens = rule.densities(g)
    terms = {"lead": (1.0 - J) * lead}
    total = terms["lead"]
    for j in range(m - i):
        p = j + i
        k = j + 1
        if k == 1:
            val, hg = trace(p, rule.y)
            flux = np.einsum("mk,mk->m", hg, dens)
            g0 = float(trace(p, x0[None])[0][0])
            K = fs.double_layer_density(rule, x0)
            dl = float(np.sum(rule.w * (val - g0) * K)) + J * g0
            sl = float(np.sum(rule.w * fs.eps(rule.y, x0[None]) * flux))
        else:
            ik = kernels(k)
            v0, g0 = trace(p, x0[None])
            nrm = dom.outward_normal(x0)
            gn = float(g0[0] @ nrm)
            # radial data: g and its normal derivative are constant on the sphere
            val, hg = trace(p, rule.y)
            nr = (rule.y - dom.center) / dom.radius
            spread = max(np.ptp(val), np.ptp(np.einsum("mk,mk->m", hg, nr)))
            if spread > 1e-8 * _scale(val, hg):
                raise CapabilityError("iterated-kernel terms are implemented for radial data only")
            Sk, Dk = iterated_sphere_moments(ik, dom, x0, n_gamma or order)
            dl = float(v0[0]) * Dk
            sl = gn * Sk
        terms[f"j{j}_double"] = dl
        terms[f"j{j}_single"] = -sl
        total += dl - sl
    return total, J, terms


def kac_residual(fs, dom, f, m=1, i=0, x0s=None, n_points=10, order=None, levels=3,
                 volume_order=None, traces="auto", margin=0.05, seed=0, tol=None, tol_scale=1.0):
    """Kac boundary conditions for u = int f eps_m at boundary points.

    m = 1 uses the Newton potential directly; m = 2 uses radial traces on a
    Euclidean ball in R^3 (the iterated-kernel terms need the sphere moments).
    """
    g = fs.group
    if not 1 <= m:
        raise ParameterError("m must be >= 1")
    if m > 2:
        raise CapabilityError(f"Kac conditions for m = {m} are beyond desk scale (m <= 2)")
    if not 0 <= i < m:
        raise ParameterError(f"condition index i must lie in 0..{m - 1}")
    _check_support(dom, f, margin)
    order = order or 24
    if x0s is None:
        x0s = boundary_points(dom, n_points, seed)
    x0s = np.atleast_2d(np.asarray(x0s, float))
    if traces == "auto":
        traces = "newton" if m == 1 else "radial"
    Js = [pot.jump_function(fs, dom, x0, order).value for x0 in x0s]
    # thirds rather than halvings: at order/4 the H^1 near rule is still pre-asymptotic
    orders = [max(4, (order * k) // levels) for k in range(1, levels + 1)]
    history = []
    per_point = []
    for n in orders:
        # u = N f is smooth at the boundary; the source rule converges long before the surface one
        vo = volume_order or max(6, n // 4)
        if traces == "newton":
            tr = newton_traces(fs, dom, f, vo)
        elif traces == "radial":
            tr = radial_traces(fs, dom, f, m, n=max(16, 2 * vo))
        else:
            raise ParameterError(f"unknown trace mode {traces!r}")
        cache = {}

        def kernels(k, n=n):
            if k not in cache:
                cache[k] = pot.IteratedKernel(k, fs, dom, order=max(6, (3 * n) // 4))
            return cache[k]

        per_point = []
        for x0, J in zip(x0s, Js):
            val, _, terms = kac_condition(fs, dom, x0, m, i, tr, n, J=J, kernels=kernels)
            per_point.append((abs(val), terms))
        history.append((n, max(r for r, _ in per_point)))
    residuals = {f"p{p}": r for p, (r, _) in enumerate(per_point)}
    t = _group_tol(g, 5e-2, 1e-1)
    return make_report(f"kac_residual:m{m}:i{i}",
                       {"domain": dom.describe(), "f": _describe_fn(f), "m": m, "i": i,
                        "x0": x0s.tolist(), "order": order, "traces": traces},
                       residuals, {k: t for k in residuals}, history,
                       {"J": Js, "terms": [tm for _, tm in per_point]}, tol, tol_scale)


# ---------------------------------------------------------------------------
# energy identities


ENERGY_FLAVORS = ("dirichlet", "schrodinger", "neumann", "robin", "mixed")


def robin_coefficients_from(group, u):
    """a_j = -X_j u / u (zero where u vanishes), so that flux(u) + u sum a_j <X_j, dnu> = 0."""

    def a(y):
        uv = u.value(y)
        gr = group.horizontal_gradient(u, y)
        safe = np.where(uv == 0, 1.0, uv)
        return np.where((uv == 0)[:, None], 0.0, -gr / safe[:, None])

    return a


def lower_half(axis=-1, center=0.0):
    """Boundary selector {y[axis] <= center}, the default Dirichlet part for 'mixed'."""
    return lambda y: np.atleast_2d(y)[:, axis] <= center


def energy_identity_residual(dom, u, flavor="dirichlet", q=None, a=None, dirichlet_part=None,
                             order=None, levels=3, panels=None, tol=None, tol_scale=1.0):
    """Green's first formula with v = u, boundary term replaced by the boundary condition.

    dirichlet / neumann: int |grad_G u|^2 + u L u = 0
    schrodinger:         int |grad_G u|^2 + q u^2 + u (L u - q u) = 0
    robin:               int |grad_G u|^2 + int_bd u^2 sum a_j <X_j, dnu> + int u L u = 0
    mixed:               Dirichlet on ``dirichlet_part``, Robin on the rest
    """
    if flavor not in ENERGY_FLAVORS:
        raise ParameterError(f"unknown energy flavor {flavor!r}")
    g = dom.group
    order = order or dom.order
    if flavor == "schrodinger" and q is None:
        raise ParameterError("schrodinger flavor needs a potential q")
    if flavor in ("robin", "mixed") and a is None:
        a = robin_coefficients_from(g, u)
    if flavor == "mixed" and dirichlet_part is None:
        dirichlet_part = lower_half()
    if panels is None:
        panels = 2 if flavor == "mixed" else 1
    history = []
    terms = {}
    for n in ladder(order, levels):
        pts, w = _volume(dom, n, panels=panels)
        rule = dom.surface_rule(n, panels if panels > 1 else None)
        dens = rule.densities(g)
        uv = u.value(pts)
        Lu = g.sub_laplacian(u, pts)
        uy = u.value(rule.y)
        scale = _scale(uv)
        energy = float(w @ _hsq(g, u, pts))
        cross = float(w @ (uv * Lu))
        potential = 0.0
        boundary = 0.0
        if flavor in ("dirichlet", "schrodinger"):
            worst = float(np.max(np.abs(uy)))
            if worst > PRECONDITION_TOL * scale:
                raise PreconditionError(f"{flavor} flavor needs u = 0 on the boundary (max |u| = {worst:.3e})")
        if flavor == "schrodinger":
            qv = np.asarray(pot._vals(q, pts), float)
            if np.min(qv) < 0:
                raise PreconditionError("schrodinger flavor needs q >= 0")
            potential = float(w @ (qv * uv * uv))
            cross = float(w @ (uv * (Lu - qv * uv)))
        if flavor == "neumann":
            fl = _flux(g, u, rule, dens)
            worst = float(np.max(np.abs(fl)))
            if worst > PRECONDITION_TOL * _scale(g.horizontal_gradient(u, pts)) * _scale(dens):
                raise PreconditionError(f"neumann flavor needs flux(u) = 0 (max = {worst:.3e})")
        if flavor in ("robin", "mixed"):
            sel = np.ones(rule.size, bool)
            if flavor == "mixed":
                dmask = np.asarray(dirichlet_part(rule.y), bool)
                worst = float(np.max(np.abs(uy[dmask]))) if dmask.any() else 0.0
                if worst > PRECONDITION_TOL * scale:
                    raise PreconditionError(f"mixed flavor needs u = 0 on the Dirichlet part (max |u| = {worst:.3e})")
                sel = ~dmask
            A = np.asarray(a(rule.y), float)
            meas = rule.w * np.einsum("mk,mk->m", A, dens)
            if np.any(meas[sel] < -1e-12 * _scale(meas)):
                raise PreconditionError("Robin measure sum_j a_j <X_j, dnu> must be >= 0 at every node")
            boundary = float(np.sum((meas * uy * uy)[sel]))
        total = energy + potential + boundary + cross
        history.append((n, abs(total)))
        terms = {"energy": energy, "potential": potential, "boundary": boundary, "u_Lu": cross}
    return make_report(f"energy_identity_residual:{flavor}",
                       {"domain": dom.describe(), "u": _describe_fn(u), "q": _describe_fn(q),
                        "flavor": flavor, "order": order},
                       {"residual": abs(total)}, {"residual": 1e-4}, history, terms, tol, tol_scale)


# ---------------------------------------------------------------------------
# Hardy inequality, sign of the boundary term, uncertainty principles


def _hardy_setup(dom, alpha):
    g = dom.group
    if g.Q < 3:
        raise UnsupportedDimensionError(f"Q = {g.Q} < 3")
    if alpha <= 2 - g.Q:
        raise ParameterError(f"alpha = {alpha} must exceed 2 - Q = {2 - g.Q}")
    lvl = float(dom.level(np.zeros((1, g.N)))[0])
    if abs(lvl) < 1e-9:
        raise ParameterError("the origin lies on the boundary")
    about = np.zeros(g.N) if lvl < 0 else None
    return g, g.gauge(), about


def _boundary_gauge_flux(g, G, rule, dens):
    """Density of <grad~ d^(2-Q), dnu> at the rule nodes (without weights)."""
    d = G.d(rule.y)
    gd = G.horizontal_grad(rule.y)
    return (2 - g.Q) * d ** (1 - g.Q) * np.einsum("mk,mk->m", gd, dens), d


def hardy_terms(dom, u, alpha, order, depth=24):
    g, G, about = _hardy_setup(dom, alpha)
    Q = g.Q
    pts, w = _volume(dom, order, about=about, depth=depth)
    d = G.d(pts)
    gd2 = np.sum(G.horizontal_grad(pts) ** 2, axis=1)
    uv = u.value(pts)
    lhs = float(w @ (d ** alpha * _hsq(g, u, pts)))
    rhs_int = float(w @ (d ** (alpha - 2) * gd2 * uv * uv))
    rule = dom.surface_rule(order)
    dens = rule.densities(g)
    flux, dy = _boundary_gauge_flux(g, G, rule, dens)
    uy = u.value(rule.y)
    bint = float(np.sum(rule.w * dy ** (alpha + Q - 2) * uy * uy * flux))
    c1 = ((alpha + Q - 2) / 2) ** 2
    c2 = (alpha + Q - 2) / (2 * (Q - 2))
    B = c2 * bint
    return {"lhs": lhs, "rhs_integral": rhs_int, "constant": c1, "boundary_term": B,
            "gap": lhs - c1 * rhs_int - B}


def hardy_gap(dom, u, alpha=0.0, order=None, levels=3, depth=24, tol=None, tol_scale=1.0):
    """gap = int d^a |grad_G u|^2 - c1 int d^(a-2) |grad_G d|^2 u^2 - B, must be >= -tol."""
    order = order or dom.order
    _hardy_setup(dom, alpha)
    history = []
    for n in ladder(order, levels):
        t = hardy_terms(dom, u, alpha, n, depth)
        history.append((n, max(0.0, -t["gap"])))
    t["ratio"] = t["lhs"] / t["rhs_integral"] if t["rhs_integral"] > 0 else math.inf
    return make_report("hardy_gap",
                       {"domain": dom.describe(), "u": _describe_fn(u), "alpha": alpha,
                        "order": order},
                       {"deficit": max(0.0, -t["gap"])}, {"deficit": 1e-4}, history, t,
                       tol, tol_scale)


def sign_experiment(dom, kind="constant", alpha=0.0, R=None, c=1.0, order=None, depth=24,
                    tol=None, tol_scale=1.0):
    """Sign of the Hardy boundary term for u = c (negative) or u = e^{-R d/2} (positive).

    Both are checked against the volume form of the boundary integral that
    Green's first formula gives:
      constant:  int_bd d^(Q+a-2) <grad~ d^(2-Q), dnu> = -(Q+a-2)(Q-2) int d^(a-2) |grad_G d|^2
      exp_decay: int_bd d^(Q+a-2) e^{-R d} <...> = int grad_G(d^(Q+a-2) e^{-R d}) . grad_G d^(2-Q)
    The exp_decay case needs d > (Q + a - 2) / R on the domain, where that
    volume integrand is positive.
    """
    g, G, about = _hardy_setup(dom, alpha)
    Q = g.Q
    order = order or dom.order
    pts, w = _volume(dom, order, about=about, depth=depth)
    d = G.d(pts)
    gd2 = np.sum(G.horizontal_grad(pts) ** 2, axis=1)
    rule = dom.surface_rule(order)
    dens = rule.densities(g)
    flux, dy = _boundary_gauge_flux(g, G, rule, dens)
    c2 = (alpha + Q - 2) / (2 * (Q - 2))
    if kind == "constant":
        u = constant(c, g.N)
        vol = -c * c * (Q + alpha - 2) * (Q - 2) * float(w @ (d ** (alpha - 2) * gd2))
        sign_res_fn = lambda B: max(0.0, B)
    elif kind == "exp_decay":
        if R is None or R <= 0:
            raise ParameterError("exp_decay needs R > 0")
        dmin = min(float(np.min(d)), float(np.min(dy)))
        if dmin <= (Q + alpha - 2) / R:
            raise ParameterError(f"exp_decay needs d > (Q+alpha-2)/R = {(Q + alpha - 2) / R:.4g} "
                                 f"on the domain (min d = {dmin:.4g})")
        u = exp_decay(g, R)
        prof = ((Q + alpha - 2) * d ** (Q + alpha - 3) - R * d ** (Q + alpha - 2)) * np.exp(-R * d)
        vol = float(w @ (prof * (2 - Q) * d ** (1 - Q) * gd2))
        sign_res_fn = lambda B: max(0.0, -B)
    else:
        raise ParameterError(f"unknown sign experiment {kind!r}")
    uy = u.value(rule.y)
    bint = float(np.sum(rule.w * dy ** (alpha + Q - 2) * uy * uy * flux))
    B = c2 * bint
    mismatch = abs(bint - vol) / abs(vol) if vol != 0 else abs(bint)
    return make_report(f"sign_experiment:{kind}",
                       {"domain": dom.describe(), "kind": kind, "alpha": alpha, "R": R, "c": c,
                        "order": order},
                       {"sign": sign_res_fn(B), "volume_mismatch": mismatch},
                       {"sign": 0.0, "volume_mismatch": 0.02}, [(order, mismatch)],
                       {"boundary_term": B, "boundary_integral": bint, "volume_formula": vol},
                       tol, tol_scale)


def uncertainty_terms(dom, u, which, order, depth=24):
    g, G, about = _hardy_setup(dom, 0.0)
    Q = g.Q
    pts, w = _volume(dom, order, about=about, depth=depth)
    d = G.d(pts)
    gd2 = np.sum(G.horizontal_grad(pts) ** 2, axis=1)
    uv = u.value(pts)
    u2 = uv * uv
    grad_int = float(w @ _hsq(g, u, pts))
    rule = dom.surface_rule(order)
    dens = rule.densities(g)
    flux, dy = _boundary_gauge_flux(g, G, rule, dens)
    uy = u.value(rule.y)
    bdry = float(np.sum(rule.w * dy ** (Q - 2) * uy * uy * flux))
    c = ((Q - 2) / 2) ** 2
    if which == "UP1":
        weight = float(w @ (d * d * gd2 * u2))
        mass = float(w @ (gd2 * u2))
    elif which == "UP2":
        # d^2 / |grad_G d|^2 is unbounded where grad_G d = 0 (the centre axis of H^n)
        with np.errstate(divide="ignore", invalid="ignore"):
            wt = np.where(gd2 > 0, d * d / np.where(gd2 > 0, gd2, 1.0), np.inf)
            wt = np.where(u2 == 0, 0.0, wt * u2)
        weight = float(w @ wt)
        mass = float(w @ u2)
    else:
        raise ParameterError(f"which must be UP1 or UP2, got {which!r}")
    lhs = weight * grad_int
    rhs = c * mass * mass + 0.5 * bdry * weight
    gap = lhs - rhs if np.isfinite(lhs) else math.inf
    return {"lhs": lhs, "rhs": rhs, "weight_integral": weight, "gradient_integral": grad_int,
            "mass_integral": mass, "boundary_integral": bdry, "gap": gap}


def uncertainty_gap(dom, u, which="UP1", order=None, levels=3, depth=24, tol=None,
                    tol_scale=1.0):
    order = order or dom.order
    history = []
    for n in ladder(order, levels):
        t = uncertainty_terms(dom, u, which, n, depth)
        history.append((n, max(0.0, -t["gap"])))
    return make_report(f"uncertainty_gap:{which}",
                       {"domain": dom.describe(), "u": _describe_fn(u), "which": which,
                        "order": order},
                       {"deficit": max(0.0, -t["gap"])}, {"deficit": 1e-4}, history, t,
                       tol, tol_scale)


# ---------------------------------------------------------------------------
# potentials-level checks wrapped as reports


def euclidean_beta_closed_form(N):
    """-1 / ((N - 2) |S^{N-1}|)."""
    area = 2 * math.pi ** (N / 2) / math.gamma(N / 2)
    return -1.0 / ((N - 2) * area)


def beta_calibration_check(group, tol=None, tol_scale=1.0):
    """Flux calibration of beta: closed form for R^N, cross-domain spread otherwise."""
    mean, spread, values = pot.calibrated_beta(group, tol=math.inf)
    residuals = {"spread": spread}
    tols = {"spread": 5e-3}
    vals = {"beta": mean, "samples": list(values)}
    if group.is_euclidean:
        exact = euclidean_beta_closed_form(group.N)
        residuals["closed_form"] = abs(mean - exact) / abs(exact)
        tols["closed_form"] = 1e-3
        vals["closed_form"] = exact
    return make_report("beta_calibration_check", {"group": group.name}, residuals, tols,
                       [(32, max(residuals.values()))], vals, tol, tol_scale)


def single_layer_continuity(fs, dom, u, x0, j=0, hs=(1e-1, 1e-2, 1e-3, 1e-4), order=None,
                            tol=None, tol_scale=1.0):
    """|S(x0 - h n) - S(x0)| along the inward normal; must shrink with h."""
    x0 = np.asarray(x0, float)
    order = order or dom.order
    n = dom.outward_normal(x0)
    s0 = pot.single_layer(fs, dom, j, u, x0, order=order, on_boundary=True)
    diffs = [abs(pot.single_layer(fs, dom, j, u, x0 - h * n, foot=x0, order=order) - s0)
             for h in hs]
    rises = sum(1 for a, b in zip(diffs[:-1], diffs[1:]) if b > a and b > HALVING_FLOOR)
    return make_report("single_layer_continuity",
                       {"domain": dom.describe(), "u": _describe_fn(u), "x0": x0.tolist(),
                        "j": j, "hs": list(hs), "order": order},
                       {"non_monotone_steps": rises, "last_difference": diffs[-1]},
                       {"non_monotone_steps": 0, "last_difference": 1e-2},
                       [(int(round(1 / h)), d) for h, d in zip(hs, diffs)],
                       {"on_boundary": s0, "differences": diffs}, tol, tol_scale)


def single_layer_pole(fs, dom, u=None, x0=None, j=0, order=None, tol=None, tol_scale=1.0):
    """On-boundary single layer at a characteristic point, compared across orders."""
    order = order or dom.order
    if x0 is None:
        x0 = geo.detect_characteristic_points(dom)[0][2]
    x0 = np.asarray(x0, float)
    history = []
    vals = []
    for n in ladder(order, 3):
        vals.append(pot.single_layer(fs, dom, j, u, x0, order=n, on_boundary=True))
        history.append((n, abs(vals[-1] - vals[-2]) if len(vals) > 1 else math.nan))
    drift = abs(vals[-1] - vals[-2])
    return make_report("single_layer_pole",
                       {"domain": dom.describe(), "u": _describe_fn(u), "x0": x0.tolist(),
                        "j": j, "order": order},
                       {"drift": drift}, {"drift": 1e-3}, history[1:], {"values": vals},
                       tol, tol_scale)


def interior_pairs(dom, n, seed=0, shrink=0.7, min_sep=0.3):
    """n pairs (y, x) well inside dom and at least min_sep * radius apart."""
    rng = np.random.default_rng(seed)
    lo, hi = (np.asarray(b, float) for b in dom.bounding_box())
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo) * shrink
    scale = dom.radius or 0.5 * dom.diameter()
    out = []
    while len(out) < n:
        y, x = c + rng.uniform(-1, 1, (2, dom.N)) * half
        # both points must stay inside after pushing them out by 1/shrink
        if np.all(dom.contains(c + (np.stack([y, x]) - c) / shrink)) \
                and np.linalg.norm(x - y) > min_sep * scale:
            out.append((y, x))
    return out


def iterated_kernel_check(fs, dom, m=2, pairs=None, n_pairs=10, order=24, h=None, seed=0,
                          tol=None, tol_scale=1.0):
    """Relative |L^(x) eps_m(y, x) - eps_{m-1}(y, x)| with nested finite differences in x."""
    if m < 2:
        raise ParameterError("the check needs m >= 2")
    pairs = interior_pairs(dom, n_pairs, seed) if pairs is None else [
        (np.asarray(p[0], float), np.asarray(p[1], float)) for p in pairs]
    ik = pot.IteratedKernel(m, fs, dom, order=order)
    lower = pot.IteratedKernel(m - 1, fs, dom, order=order)
    kw = {} if h is None else {"h": h}
    residuals = {}
    vals = {}
    for i, (y, x) in enumerate(pairs):
        f = lambda X, y=y: np.array([ik.eval(y, xx) for xx in np.atleast_2d(X)])
        L = float(fd_sublaplacian(fs.group, f, x, **kw)[0])
        target = float(lower.eval(y, x))
        residuals[f"pair{i}"] = abs(L - target) / abs(target)
        vals[f"pair{i}"] = [L, target]
    worst = max(residuals.values()) if residuals else 0.0
    return make_report("iterated_kernel_check",
                       {"domain": dom.describe(), "m": m, "order": order, "h": h,
                        "pairs": [[y.tolist(), x.tolist()] for y, x in pairs]},
                       residuals, {k: 5e-2 for k in residuals}, [(order, worst)], vals,
                       tol, tol_scale)


def perimeter_equivalence(dom, phis, order=None, tol=None, tol_scale=1.0):
    """int phi <X_j, dnu> through the contraction form and through |v_H| d sigma."""
    g = dom.group
    order = order or dom.order
    residuals = {}
    vals = {}
    for a, phi in enumerate(phis):
        fn = phi.value if isinstance(phi, TestFunction) else phi
        for j in range(g.N1):
            form = geo.surface_integrate_form(dom, fn, k=j, order=order, estimate=False).value
            per = geo.surface_integrate_perimeter(dom, j, fn, order=order, estimate=False).value
            residuals[f"f{a}_k{j + 1}"] = abs(form - per)
            vals[f"f{a}_k{j + 1}"] = [form, per]
    t = _group_tol(g, 1e-4, 1e-3)
    worst = max(residuals.values()) if residuals else 0.0
    return make_report("perimeter_equivalence",
                       {"domain": dom.describe(), "integrands": [_describe_fn(p) for p in phis],
                        "order": order},
                       residuals, {k: t for k in residuals}, [(order, worst)], vals, tol, tol_scale)


EXPERIMENTS = {
    "divergence_residual": divergence_residual,
    "green_residual": green_residual,
    "mean_value_check": mean_value_check,
    "representation_residual": representation_residual,
    "jump_relations_check": jump_relations_check,
    "kac_residual": kac_residual,
    "energy_identity_residual": energy_identity_residual,
    "hardy_gap": hardy_gap,
    "sign_experiment": sign_experiment,
    "uncertainty_gap": uncertainty_gap,
    "beta_calibration_check": beta_calibration_check,
    "single_layer_continuity": single_layer_continuity,
    "single_layer_pole": single_layer_pole,
    "perimeter_equivalence": perimeter_equivalence,
    "iterated_kernel_check": iterated_kernel_check,
}
