"""Homogeneous Carnot groups given by strata and coefficient polynomials.

A group on R^N is described by its strata dimensions N_1..N_r and by the
polynomials a[k, l, m] in

    X_k = d/dx_k^(1) + sum_{l>=2} sum_m a[k, l, m](x) d/dx_m^(l),

which must be dilation-homogeneous of degree l - 1.  Everything in the
package is vectorised over a leading axis of points: a point array has
shape (M, N).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import CapabilityError, HormanderError, StructureError, UnsupportedDimensionError
from .polynomial import Poly

_NAME_RE = re.compile(r"^s(\d+)_(\d+)$")

HOMOGENEITY_LAMBDAS = (0.5, 2.0, 3.0)


def coord_names(strata: Sequence[int]) -> list[str]:
    return [f"s{l + 1}_{m + 1}" for l, n in enumerate(strata) for m in range(n)]


@dataclass
class GroupSpec:
    """Raw description of a group; validated by :func:`build_group`.

    ``coeffs`` maps 1-based (k, l, m) to a Poly in the N coordinates.
    ``law`` (optional) lists N polynomials in 2N variables (x then y)
    giving the coordinates of x o y.
    """

    name: str
    strata_dims: tuple
    coeffs: dict = field(default_factory=dict)
    law: Optional[list] = None
    gauge: Optional[str] = None  # builtin gauge kind if any

    @property
    def N(self) -> int:
        return int(sum(self.strata_dims))

    @classmethod
    def from_json(cls, data: Mapping) -> "GroupSpec":
        strata = tuple(int(s) for s in data["strata"])
        names = coord_names(strata)
        coeffs = {}
        for entry in data.get("coeffs", []):
            key = (int(entry["k"]), int(entry["l"]), int(entry["m"]))
            p = Poly.from_json(entry["poly"], names)
            coeffs[key] = coeffs.get(key, Poly.zero(len(names))) + p
        law = None
        if data.get("law"):
            lnames = [f"x_{n}" for n in names] + [f"y_{n}" for n in names]
            law = [Poly.from_json(c, lnames) for c in data["law"]]
        return cls(str(data.get("name", "user")), strata, coeffs, law)

    def to_json(self) -> dict:
        names = coord_names(self.strata_dims)
        out = {
            "name": self.name,
            "strata": list(self.strata_dims),
            "coeffs": [
                {"k": k, "l": l, "m": m, "poly": p.to_json(names)}
                for (k, l, m), p in sorted(self.coeffs.items())
            ],
        }
        if self.law is not None:
            lnames = [f"x_{n}" for n in names] + [f"y_{n}" for n in names]
            out["law"] = [p.to_json(lnames) for p in self.law]
        return out


def euclidean_spec(n: int) -> GroupSpec:
    N = int(n)
    law = [Poly.var(i, 2 * N) + Poly.var(N + i, 2 * N) for i in range(N)]
    return GroupSpec(f"euclidean:{N}", (N,), {}, law, gauge="euclidean")


def heisenberg_spec(n: int) -> GroupSpec:
    """H^n with X_j = dx_j - (y_j/2) dt and Y_j = dy_j + (x_j/2) dt."""
    n = int(n)
    N = 2 * n + 1
    half = Fraction(1, 2)
    coeffs = {}
    for j in range(n):
        coeffs[(j + 1, 2, 1)] = Poly.var(n + j, N) * (-half)
        coeffs[(n + j + 1, 2, 1)] = Poly.var(j, N) * half
    V = lambda i: Poly.var(i, 2 * N)
    law = [V(i) + V(N + i) for i in range(2 * n)]
    t = V(2 * n) + V(N + 2 * n)
    for j in range(n):
        # (x1 y2 - y1 x2) / 2
        t = t + (V(j) * V(N + n + j) - V(n + j) * V(N + j)) * half
    law.append(t)
    return GroupSpec(f"heisenberg:{n}", (2 * n, 1), coeffs, law, gauge="heisenberg")


BUILTIN_PATTERN = re.compile(r"^(euclidean|heisenberg):(\d+)$")


def builtin_spec(name: str) -> GroupSpec:
    m = BUILTIN_PATTERN.match(name.strip())
    if not m:
        raise KeyError(f"unknown builtin group {name!r}")
    kind, n = m.group(1), int(m.group(2))
    if n < 1:
        raise ValueError("builtin dimension must be positive")
    return euclidean_spec(n) if kind == "euclidean" else heisenberg_spec(n)


class CarnotGroup:
    """Validated, immutable group. Build with :func:`build_group`."""

    def __init__(self, spec: GroupSpec):
        self.spec = spec
        self.name = spec.name
        self.strata = tuple(int(s) for s in spec.strata_dims)
        self.r = len(self.strata)
        self.N = int(sum(self.strata))
        self.N1 = self.strata[0]
        self.Q = int(sum((l + 1) * n for l, n in enumerate(self.strata)))
        self.offsets = tuple(int(v) for v in np.concatenate([[0], np.cumsum(self.strata)]))
        self.weights = np.concatenate(
            [np.full(n, l + 1, dtype=float) for l, n in enumerate(self.strata)]
        )
        self.names = coord_names(self.strata)
        N = self.N
        self.field_polys = []
        for k in range(self.N1):
            vec = [Poly.zero(N) for _ in range(N)]
            vec[k] = Poly.const(1, N)
            self.field_polys.append(vec)
        for (k, l, m), p in spec.coeffs.items():
            j = self.offsets[l - 1] + (m - 1)
            self.field_polys[k - 1][j] = self.field_polys[k - 1][j] + p
        self.field_grads = [[[p.deriv(i) for i in range(N)] for p in vec] for vec in self.field_polys]
        self.law = spec.law
        if self.law is not None:
            self.law_dy = [[p.deriv(N + j) for j in range(N)] for p in self.law]
        self._gauge = None

    def __repr__(self):
        return f"CarnotGroup({self.name!r}, strata={list(self.strata)}, Q={self.Q})"

    def stratum(self, x, l: int):
        """Coordinates of stratum l (1-based)."""
        x = np.asarray(x)
        return x[..., self.offsets[l - 1]:self.offsets[l]]

    @property
    def has_law(self) -> bool:
        return self.law is not None

    @property
    def is_euclidean(self) -> bool:
        return self.r == 1

    # fields -------------------------------------------------------------
    def fields(self, x) -> np.ndarray:
        """Ambient coefficient vectors V_k(x), shape (M, N1, N)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        M = x.shape[0]
        out = np.zeros((M, self.N1, self.N))
        for k, vec in enumerate(self.field_polys):
            for j, p in enumerate(vec):
                if p.is_zero():
                    continue
                if p.degree() == 0:
                    out[:, k, j] = float(next(iter(p.terms.values())))
                else:
                    out[:, k, j] = p(x)
        return out

    def field_derivatives(self, x) -> np.ndarray:
        """dV_kj/dx_i, shape (M, N1, N, N) indexed [m, k, j, i]."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((x.shape[0], self.N1, self.N, self.N))
        for k in range(self.N1):
            for j in range(self.N):
                for i, p in enumerate(self.field_grads[k][j]):
                    if not p.is_zero():
                        out[:, k, j, i] = p(x)
        return out

    def apply_field(self, k: int, f, x) -> np.ndarray:
        """X_k f at x from the ambient gradient of f (k is 0-based)."""
        if not 0 <= k < self.N1:
            raise IndexError(f"field index {k} out of range 0..{self.N1 - 1}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.atleast_2d(f.grad(x))
        return np.einsum("mj,mj->m", self.fields(x)[:, k, :], g)

    def horizontal_gradient(self, f, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.atleast_2d(f.grad(x))
        return np.einsum("mkj,mj->mk", self.fields(x), g)

    def horizontal_from_ambient(self, x, g) -> np.ndarray:
        return np.einsum("mkj,mj->mk", self.fields(x), np.atleast_2d(g))

    def sub_laplacian(self, f, x) -> np.ndarray:
        """sum_k X_k X_k f, expanded with the Hessian of f."""
        if getattr(f, "hess", None) is None:
            raise CapabilityError("sub_laplacian needs a test function with a Hessian")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        V = self.fields(x)
        dV = self.field_derivatives(x)
        g = np.atleast_2d(f.grad(x))
        H = f.hess(x).reshape(x.shape[0], self.N, self.N)
        second = np.einsum("mki,mkj,mij->m", V, V, H)
        first = np.einsum("mki,mkji,mj->m", V, dV, g)
        return second + first

    def contraction_density(self, k: int, x, tangent) -> np.ndarray:
        """det[V_k(x) | tangent], tangent of shape (M, N, N-1)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        T = np.asarray(tangent, dtype=float).reshape(x.shape[0], self.N, self.N - 1)
        sv = np.linalg.svd(T, compute_uv=False)
        scale = np.maximum(sv[:, :1], 1e-300)
        if np.any(sv[:, -1] <= 1e-12 * scale[:, 0]):
            from .errors import GeometryError

            raise GeometryError("degenerate tangent basis (rank < N-1)")
        from .geometry import cofactor_normal

        V = self.fields(x)[:, k, :]
        return np.einsum("mj,mj->m", V, cofactor_normal(T))

    # group law ----------------------------------------------------------
    def dilate(self, x, lam) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lam = np.asarray(lam, dtype=float)
        if lam.ndim == 0:
            return x * lam ** self.weights
        return x * lam[..., None] ** self.weights

    def _need_law(self):
        if self.law is None:
            raise CapabilityError(f"group {self.name!r} has no group-law polynomials")

    def multiply(self, x, y) -> np.ndarray:
        self._need_law()
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        xy = np.concatenate(
            [np.broadcast_to(x, shape).reshape(-1, self.N), np.broadcast_to(y, shape).reshape(-1, self.N)],
            axis=1,
        )
        out = np.stack([p(xy) for p in self.law], axis=1)
        return out.reshape(shape)

    def inverse(self, x) -> np.ndarray:
        """Solve x o y = 0 stratum by stratum (law is triangular)."""
        self._need_law()
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.N)
        y = np.zeros_like(flat)
        for l in range(self.r):
            sl = slice(self.offsets[l], self.offsets[l + 1])
            y[:, sl] = 0.0
            y[:, sl] = -self.multiply(flat, y)[:, sl]
        return y.reshape(x.shape)

    def left_jacobian(self, a, x) -> np.ndarray:
        """d(a o x)/dx, shape (M, N, N)."""
        self._need_law()
        a = np.atleast_2d(np.asarray(a, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        shape = np.broadcast_shapes(a.shape, x.shape)
        ax = np.concatenate([np.broadcast_to(a, shape), np.broadcast_to(x, shape)], axis=1)
        out = np.zeros((shape[0], self.N, self.N))
        for i in range(self.N):
            for j in range(self.N):
                p = self.law_dy[i][j]
                if not p.is_zero():
                    out[:, i, j] = p(ax)
        return out

    def translated_poly(self, P: Poly, a) -> Poly:
        """Polynomial y -> P(a o y) for a fixed point a."""
        self._need_law()
        N = self.N
        a = [Fraction(float(v)).limit_denominator(10**12) for v in np.asarray(a, dtype=float)]
        subs = [Poly.const(v, N) for v in a] + [Poly.var(i, N) for i in range(N)]
        return P.compose([p.compose(subs) for p in self.law])

    # gauge --------------------------------------------------------------
    def gauge(self) -> "Gauge":
        if self._gauge is None:
            kind = self.spec.gauge
            if kind is None:
                raise CapabilityError(f"group {self.name!r} has no builtin gauge")
            if self.Q < 3:
                raise UnsupportedDimensionError(f"Q = {self.Q} < 3: no fundamental solution")
            self._gauge = Gauge(self, kind)
        return self._gauge


class Gauge:
    """d = P^(1/p) for a positive polynomial P.

    Euclidean: P = |x|^2, p = 2.  Heisenberg: P = |z|^4 + 16 t^2, p = 4.
    """

    def __init__(self, group: CarnotGroup, kind: str):
        self.group = group
        self.kind = kind
        N = group.N
        if kind == "euclidean":
            self.P = sum((Poly.var(i, N) ** 2 for i in range(N)), Poly.zero(N))
            self.power = 2
            d = N
            s_d = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
            self.beta = 1.0 / ((2 - d) * s_d)
        elif kind == "heisenberg":
            n = (N - 1) // 2
            z2 = sum((Poly.var(i, N) ** 2 for i in range(2 * n)), Poly.zero(N))
            self.P = z2 * z2 + Poly.var(N - 1, N) ** 2 * 16
            self.power = 4
            self.beta = None  # fixed by calibration
        else:
            raise CapabilityError(f"unknown gauge kind {kind!r}")
        self.grad_P = [self.P.deriv(i) for i in range(N)]

    def __call__(self, x) -> np.ndarray:
        return self.d(x)

    def d(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        v = np.maximum(self.P(np.atleast_2d(x)), 0.0) ** (1.0 / self.power)
        return v[0] if single else v

    def ambient_grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dP = np.stack([p(x) for p in self.grad_P], axis=1)
        d = self.d(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            return dP / (self.power * d ** (self.power - 1))[:, None]

    def horizontal_grad(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return self.group.horizontal_from_ambient(x, self.ambient_grad(x))

    def distance(self, x, y) -> np.ndarray:
        """d(y^{-1} o x)."""
        g = self.group
        return self.d(g.multiply(g.inverse(y), x))


def _check_homogeneity(group: CarnotGroup, seed: int = 12345):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.5, 1.5, size=(100, group.N))
    for (k, l, m), p in sorted(group.spec.coeffs.items()):
        if not (1 <= k <= group.N1 and 2 <= l <= group.r and 1 <= m <= group.strata[l - 1]):
            raise StructureError(f"coefficient index (k={k}, l={l}, m={m}) out of range", (k, l, m))
        lower = group.offsets[l - 1]
        if any(i >= lower for i in p.variables()):
            raise StructureError(
                f"a[k={k}, l={l}, m={m}] depends on coordinates of stratum >= {l}", (k, l, m)
            )
        base = p(X)
        scale = max(1.0, float(np.max(np.abs(base))))
        for lam in HOMOGENEITY_LAMBDAS:
            lhs = p(group.dilate(X, lam))
            if np.max(np.abs(lhs - lam ** (l - 1) * base)) > 1e-9 * scale * lam ** (l - 1):
                raise StructureError(
                    f"a[k={k}, l={l}, m={m}] is not homogeneous of degree {l - 1}", (k, l, m)
                )


def _bracket(A, B):
    N = len(A)
    out = []
    for j in range(N):
        acc = Poly.zero(A[0].nvars)
        for i in range(N):
            if not A[i].is_zero():
                acc = acc + A[i] * B[j].deriv(i)
            if not B[i].is_zero():
                acc = acc - B[i] * A[j].deriv(i)
        out.append(acc)
    return out


def _check_hormander(group: CarnotGroup, seed: int = 54321):
    level = [list(v) for v in group.field_polys]
    allv = list(level)
    for _ in range(group.r - 1):
        nxt = []
        for A in group.field_polys:
            for B in level:
                C = _bracket(A, B)
                if not all(c.is_zero() for c in C):
                    nxt.append(C)
        allv.extend(nxt)
        level = nxt
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(20, group.N))
    for x in X:
        Mx = np.array([[p(x[None, :])[0] for p in vec] for vec in allv])
        if np.linalg.matrix_rank(Mx, tol=1e-9) < group.N:
            raise HormanderError(f"bracket rank < {group.N} at {x.tolist()}", witness=x)


def _check_law(group: CarnotGroup):
    """Law must be x + y + (terms in lower strata only) on each stratum."""
    N = group.N
    for l in range(group.r):
        for i in range(group.offsets[l], group.offsets[l + 1]):
            p = group.law[i] - Poly.var(i, 2 * N) - Poly.var(N + i, 2 * N)
            for v in p.variables():
                idx = v % N
                if idx >= group.offsets[l]:
                    raise StructureError(f"group law coordinate {i} is not triangular")


def build_group(spec) -> CarnotGroup:
    """Build and validate a group from a GroupSpec, a JSON dict or a builtin name."""
    if isinstance(spec, str):
        spec = builtin_spec(spec)
    elif isinstance(spec, Mapping):
        spec = GroupSpec.from_json(spec)
    if not spec.strata_dims or any(int(s) <= 0 for s in spec.strata_dims):
        raise StructureError("strata dimensions must be a nonempty list of positive integers")
    g = CarnotGroup(spec)
    _check_homogeneity(g)
    _check_hormander(g)
    if g.law is not None:
        if len(g.law) != g.N or any(p.nvars != 2 * g.N for p in g.law):
            raise StructureError("group law needs N polynomials in 2N variables")
        _check_law(g)
    return g


def group_element_op(g: CarnotGroup, op: str, *args):
    if op == "multiply":
        return g.multiply(*args)
    if op == "inverse":
        return g.inverse(*args)
    if op == "dilate":
        return g.dilate(*args)
    raise ValueError(f"unknown group operation {op!r}")
