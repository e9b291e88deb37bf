"""Test functions: value / ambient gradient / ambient Hessian bundles.

Built from polynomials and closed under sums, products and composition
with a scalar profile, so every derivative stays analytic.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .polynomial import Poly


class TestFunction:
    __test__ = False  # keep pytest from collecting this class

    def __init__(
        self,
        value: Callable,
        grad: Optional[Callable] = None,
        hess: Optional[Callable] = None,
        smoothness: str = "C^inf",
        name: str = "",
        support=None,
    ):
        self._value = value
        self._grad = grad
        self._hess = hess
        self.smoothness = smoothness
        self.name = name
        # optional (center, radius, metric) ball containing the support
        self.support = support
        self.radial = None  # (center, profile) for radial Euclidean functions

    def __repr__(self):
        return f"TestFunction({self.name or '?'})"

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._value(x[None, :])[0]
        return self._value(x)

    @property
    def has_grad(self):
        return self._grad is not None

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return self._grad(x[None, :])[0]
        return self._grad(x)

    @property
    def hess(self):
        if self._hess is None:
            return None
        def h(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 1:
                return self._hess(x[None, :])[0]
            return self._hess(x)
        return h

    # algebra
    def __add__(self, other: "TestFunction") -> "TestFunction":
        if not isinstance(other, TestFunction):
            c = float(other)
            return TestFunction(lambda x: self._value(x) + c, self._grad, self._hess,
                                self.smoothness, f"{self.name}+{c}")
        return TestFunction(
            lambda x: self._value(x) + other._value(x),
            lambda x: self._grad(x) + other._grad(x),
            None if self._hess is None or other._hess is None
            else (lambda x: self._hess(x) + other._hess(x)),
            self.smoothness,
            f"({self.name}+{other.name})",
        )

    def scale(self, c: float) -> "TestFunction":
        c = float(c)
        return TestFunction(
            lambda x: c * self._value(x),
            lambda x: c * self._grad(x),
            None if self._hess is None else (lambda x: c * self._hess(x)),
            self.smoothness,
            f"{c}*{self.name}",
            self.support,
        )

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        if not isinstance(other, TestFunction):
            return self.scale(other)
        f, g = self, other

        def hess(x):
            fv, gv = f._value(x), g._value(x)
            fg, gg = f._grad(x), g._grad(x)
            return (fv[:, None, None] * g._hess(x) + gv[:, None, None] * f._hess(x)
                    + fg[:, :, None] * gg[:, None, :] + gg[:, :, None] * fg[:, None, :])

        sup = f.support if f.support is not None else g.support
        return TestFunction(
            lambda x: f._value(x) * g._value(x),
            lambda x: f._value(x)[:, None] * g._grad(x) + g._value(x)[:, None] * f._grad(x),
            None if f._hess is None or g._hess is None else hess,
            f.smoothness,
            f"({f.name}*{g.name})",
            sup,
        )

    __rmul__ = __mul__

    def compose(self, g0, g1, g2, name: str = "", smoothness: str | None = None) -> "TestFunction":
        """x -> G(f(x)) with G, G', G'' given as vectorised callables."""
        f = self

        def grad(x):
            return g1(f._value(x))[:, None] * f._grad(x)

        def hess(x):
            v = f._value(x)
            gr = f._grad(x)
            return g2(v)[:, None, None] * gr[:, :, None] * gr[:, None, :] + g1(v)[:, None, None] * f._hess(x)

        return TestFunction(
            lambda x: g0(f._value(x)), grad, None if f._hess is None else hess,
            smoothness or f.smoothness, name or f"G({f.name})",
        )


def from_poly(P: Poly, name: str = "") -> TestFunction:
    N = P.nvars
    grads = [P.deriv(i) for i in range(N)]
    hess = [[g.deriv(j) for j in range(N)] for g in grads]

    def gfun(x):
        return np.stack([g(x) for g in grads], axis=1)

    def hfun(x):
        out = np.zeros((x.shape[0], N, N))
        for i in range(N):
            for j in range(i, N):
                if not hess[i][j].is_zero():
                    out[:, i, j] = hess[i][j](x)
                    out[:, j, i] = out[:, i, j]
        return out

    f = TestFunction(lambda x: P(x), gfun, hfun, "C^inf", name or repr(P))
    f.poly = P
    return f


def constant(c: float, N: int) -> TestFunction:
    return from_poly(Poly.const(c, N), name=f"const({c})")


def monomial(exps: Sequence[int], coef: float = 1.0) -> TestFunction:
    return from_poly(Poly(len(exps), {tuple(exps): coef}))


def exp_of(f: TestFunction, scale: float = 1.0) -> TestFunction:
    s = float(scale)
    return f.compose(lambda v: np.exp(s * v), lambda v: s * np.exp(s * v),
                     lambda v: s * s * np.exp(s * v), name=f"exp({s}*{f.name})")


def sin_of(f: TestFunction, scale: float = 1.0) -> TestFunction:
    s = float(scale)
    return f.compose(lambda v: np.sin(s * v), lambda v: s * np.cos(s * v),
                     lambda v: -s * s * np.sin(s * v), name=f"sin({s}*{f.name})")


def power_profile(f: TestFunction, p: float) -> TestFunction:
    """x -> f(x)^p for f > 0."""
    return f.compose(lambda v: v ** p, lambda v: p * v ** (p - 1),
                     lambda v: p * (p - 1) * v ** (p - 2), name=f"({f.name})^{p}")


def _bump_profile():
    # G(s) = (1 - s)^4 for s < 1, else 0 ; C^3 at s = 1
    def g0(s):
        return np.where(s < 1.0, np.clip(1.0 - s, 0.0, None) ** 4, 0.0)

    def g1(s):
        return np.where(s < 1.0, -4.0 * np.clip(1.0 - s, 0.0, None) ** 3, 0.0)

    def g2(s):
        return np.where(s < 1.0, 12.0 * np.clip(1.0 - s, 0.0, None) ** 2, 0.0)

    return g0, g1, g2


def euclidean_bump(center, radius: float, amplitude: float = 1.0) -> TestFunction:
    """amplitude * (1 - |x-c|^2/a^2)^4 on the ball of radius a."""
    c = np.asarray(center, dtype=float)
    N = len(c)
    a2 = float(radius) ** 2
    P = Poly.zero(N)
    for i in range(N):
        P = P + (Poly.var(i, N) - float(c[i])) ** 2
    s = from_poly(P * (1.0 / a2))
    f = s.compose(*_bump_profile(), name=f"bump(c={c.tolist()}, a={radius})", smoothness="C^3")
    if amplitude != 1.0:
        f = f.scale(amplitude)
    f.support = (c, float(radius), "euclidean")

    def profile(r):
        return amplitude * np.where(r < radius, np.clip(1.0 - (r / radius) ** 2, 0, None) ** 4, 0.0)

    f.radial = (c, profile)
    f.name = f"bump(c={c.tolist()}, a={radius})"
    return f


def gauge_bump(group, center, radius: float, amplitude: float = 1.0) -> TestFunction:
    """amplitude * (1 - d(c^{-1} x)^p / a^p)^4, p the gauge power (smooth at c)."""
    gauge = group.gauge()
    c = np.asarray(center, dtype=float)
    P = gauge.P if not np.any(c) else group.translated_poly(gauge.P, group.inverse(c))
    s = from_poly(P * (1.0 / float(radius) ** gauge.power))
    f = s.compose(*_bump_profile(), name=f"gbump(c={c.tolist()}, a={radius})", smoothness="C^3")
    if amplitude != 1.0:
        f = f.scale(amplitude)
    f.support = (c, float(radius), "gauge")
    f.name = f"gbump(c={c.tolist()}, a={radius})"
    return f


def positive_part_power(f: TestFunction, p: int = 4) -> TestFunction:
    """max(f, 0)^p, C^(p-1) across the zero set of f."""
    p = int(p)

    def g0(v):
        return np.clip(v, 0.0, None) ** p

    def g1(v):
        return p * np.clip(v, 0.0, None) ** (p - 1)

    def g2(v):
        return p * (p - 1) * np.clip(v, 0.0, None) ** (p - 2)

    return f.compose(g0, g1, g2, name=f"({f.name})_+^{p}", smoothness=f"C^{p - 1}")


def gauge_function(group, center=None) -> TestFunction:
    """y -> d(c^{-1} o y); smooth away from c."""
    gauge = group.gauge()
    c = np.zeros(group.N) if center is None else np.asarray(center, float)
    P = gauge.P if not np.any(c) else group.translated_poly(gauge.P, group.inverse(c))
    f = power_profile(from_poly(P), 1.0 / gauge.power)
    f.name = "d" if not np.any(c) else f"d(c={c.tolist()})"
    return f


def exp_decay(group, R: float) -> TestFunction:
    """e^{-R d / 2}."""
    f = exp_of(gauge_function(group), -0.5 * float(R))
    f.name = f"exp(-{R}d/2)"
    return f


def hardy_witness(N: int, width: float) -> TestFunction:
    """r^{-(N-2)/2} phi(log r / w + 1), phi(z) = (1 - z^2)^2 on |z| < 1.

    Supported in e^{-2w} <= r <= 1; its Hardy ratio approaches ((N-2)/2)^2
    as w grows (the log-scale profile flattens out).
    """
    w = float(width)
    k = (N - 2) / 4.0   # u = v^{-k} phi(z), v = r^2, z = log(v) / (2w) + 1

    def parts(v):
        v = np.maximum(v, 1e-300)
        z = np.log(v) / (2 * w) + 1.0
        inside = np.abs(z) < 1.0
        zc = np.where(inside, z, 0.0)
        phi = np.where(inside, (1 - zc * zc) ** 2, 0.0)
        d1 = np.where(inside, -4 * zc * (1 - zc * zc), 0.0)
        d2 = np.where(inside, 12 * zc * zc - 4, 0.0)
        return v, phi, d1 / (2 * w), d2 / (2 * w) ** 2

    def g0(v):
        v, phi, _, _ = parts(v)
        return v ** -k * phi

    def g1(v):
        v, phi, p1, _ = parts(v)
        return v ** (-k - 1) * (p1 - k * phi)

    def g2(v):
        v, phi, p1, p2 = parts(v)
        h = p1 - k * phi
        dh = p2 - k * p1
        return v ** (-k - 2) * (dh - (k + 1) * h)

    r2 = Poly.zero(N)
    for i in range(N):
        r2 = r2 + Poly.var(i, N) ** 2
    f = from_poly(r2).compose(g0, g1, g2, name=f"hardy_witness(w={w})", smoothness="C^1")
    f.support = (np.zeros(N), 1.0, "euclidean")
    return f


def random_poly(N: int, degree: int, seed: int, scale: float = 1.0) -> TestFunction:
    """Dense polynomial with i.i.d. normal coefficients (fixed seed)."""
    rng = np.random.default_rng(seed)
    terms = {}
    for exps in np.ndindex(*([degree + 1] * N)):
        if sum(exps) <= degree:
            terms[exps] = float(np.round(scale * rng.standard_normal(), 6))
    return from_poly(Poly(N, terms), name=f"poly(deg={degree}, seed={seed})")


def function_from_json(data, group) -> TestFunction:
    """Build a TestFunction from a small JSON vocabulary.

    {"poly": [{"c": 1, "monomial": {"s1_1": 2}}, ...]}, {"const": c},
    {"euclidean_bump": {"center", "radius", "amplitude"}}, {"gauge_bump": {...}},
    {"random_poly": {"degree", "seed", "scale"}}, {"exp": f, "scale": s},
    {"sin": f, "scale": s}, {"positive_part": f, "power": p}, {"gauge": {"center"}},
    {"exp_decay": R}, {"sum": [f, ...]}, {"product": [f, ...]}, {"scale": c, "of": f}.
    """
    from .group import coord_names

    N = group.N
    if isinstance(data, (int, float)):
        return constant(float(data), N)
    if "poly" in data:
        return from_poly(Poly.from_json(data["poly"], coord_names(group.strata)))
    if "const" in data:
        return constant(float(data["const"]), N)
    if "euclidean_bump" in data:
        b = data["euclidean_bump"]
        return euclidean_bump(b.get("center", [0.0] * N), float(b["radius"]),
                              float(b.get("amplitude", 1.0)))
    if "gauge_bump" in data:
        b = data["gauge_bump"]
        return gauge_bump(group, b.get("center", [0.0] * N), float(b["radius"]),
                          float(b.get("amplitude", 1.0)))
    if "random_poly" in data:
        b = data["random_poly"]
        return random_poly(N, int(b.get("degree", 3)), int(b.get("seed", 0)),
                           float(b.get("scale", 1.0)))
    if "exp" in data:
        return exp_of(function_from_json(data["exp"], group), float(data.get("scale", 1.0)))
    if "sin" in data:
        return sin_of(function_from_json(data["sin"], group), float(data.get("scale", 1.0)))
    if "positive_part" in data:
        return positive_part_power(function_from_json(data["positive_part"], group),
                                   int(data.get("power", 4)))
    if "gauge" in data:
        return gauge_function(group, (data["gauge"] or {}).get("center"))
    if "exp_decay" in data:
        return exp_decay(group, float(data["exp_decay"]))
    if "sum" in data:
        parts = [function_from_json(d, group) for d in data["sum"]]
        out = parts[0]
        for p in parts[1:]:
            out = out + p
        return out
    if "product" in data:
        parts = [function_from_json(d, group) for d in data["product"]]
        out = parts[0]
        for p in parts[1:]:
            out = out * p
        return out
    if "of" in data:
        return function_from_json(data["of"], group).scale(float(data.get("scale", 1.0)))
    raise ValueError(f"cannot build a test function from {data!r}")
