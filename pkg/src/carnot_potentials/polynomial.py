"""Sparse multivariate polynomials with exact rational coefficients.

Coefficients are kept as ``Fraction`` so that structural checks (weighted
degrees, composition with a group law) stay exact; evaluation is vectorised
in double precision.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np


def _frac(c) -> Fraction:
    if isinstance(c, Fraction):
        return c
    if isinstance(c, (int, np.integer)):
        return Fraction(int(c))
    return Fraction(float(c)).limit_denominator(10**12)


class Poly:
    """Polynomial in ``nvars`` variables, stored as {exponent tuple: coefficient}."""

    __slots__ = ("nvars", "terms", "_exps", "_coefs")

    def __init__(self, nvars: int, terms: Mapping[tuple, object] | None = None):
        self.nvars = int(nvars)
        clean = {}
        for mono, c in (terms or {}).items():
            mono = tuple(int(e) for e in mono)
            if len(mono) != self.nvars:
                raise ValueError("monomial length does not match nvars")
            c = _frac(c)
            if c != 0:
                clean[mono] = clean.get(mono, Fraction(0)) + c
        self.terms = {m: c for m, c in clean.items() if c != 0}
        self._exps = None
        self._coefs = None

    # constructors
    @classmethod
    def const(cls, c, nvars: int) -> "Poly":
        return cls(nvars, {(0,) * nvars: c})

    @classmethod
    def var(cls, i: int, nvars: int) -> "Poly":
        mono = [0] * nvars
        mono[i] = 1
        return cls(nvars, {tuple(mono): 1})

    @classmethod
    def zero(cls, nvars: int) -> "Poly":
        return cls(nvars)

    # algebra
    def is_zero(self) -> bool:
        return not self.terms

    def __add__(self, other):
        if not isinstance(other, Poly):
            other = Poly.const(other, self.nvars)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, Fraction(0)) + c
        return Poly(self.nvars, out)

    __radd__ = __add__

    def __neg__(self):
        return Poly(self.nvars, {m: -c for m, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-other if isinstance(other, Poly) else -_frac(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Poly):
            c = _frac(other)
            return Poly(self.nvars, {m: c * v for m, v in self.terms.items()})
        out: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                m = tuple(a + b for a, b in zip(m1, m2))
                out[m] = out.get(m, Fraction(0)) + c1 * c2
        return Poly(self.nvars, out)

    __rmul__ = __mul__

    def __pow__(self, n: int):
        out = Poly.const(1, self.nvars)
        for _ in range(int(n)):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Poly) and self.nvars == other.nvars and self.terms == other.terms

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return "Poly(0)"
        parts = []
        for m, c in sorted(self.terms.items()):
            mono = "*".join(f"x{i}^{e}" if e > 1 else f"x{i}" for i, e in enumerate(m) if e)
            parts.append(f"{c}" + (f"*{mono}" if mono else ""))
        return "Poly(" + " + ".join(parts) + ")"

    def deriv(self, i: int) -> "Poly":
        out = {}
        for m, c in self.terms.items():
            if m[i] == 0:
                continue
            mm = list(m)
            mm[i] -= 1
            out[tuple(mm)] = c * m[i]
        return Poly(self.nvars, out)

    def compose(self, subs: Sequence["Poly"]) -> "Poly":
        """Substitute ``subs[i]`` for variable i (all subs share one nvars)."""
        if len(subs) != self.nvars:
            raise ValueError("need one substitution per variable")
        n = subs[0].nvars
        out = Poly.zero(n)
        cache: dict = {}
        for m, c in self.terms.items():
            term = Poly.const(c, n)
            for i, e in enumerate(m):
                if e:
                    key = (i, e)
                    if key not in cache:
                        cache[key] = subs[i] ** e
                    term = term * cache[key]
            out = out + term
        return out

    def variables(self) -> set:
        return {i for m in self.terms for i, e in enumerate(m) if e}

    def weighted_degrees(self, weights: Sequence[int]) -> set:
        return {sum(w * e for w, e in zip(weights, m)) for m in self.terms}

    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    # evaluation
    def _compile(self):
        if self._exps is None:
            if self.terms:
                monos = sorted(self.terms)
                self._exps = np.array(monos, dtype=np.int64)
                self._coefs = np.array([float(self.terms[m]) for m in monos])
            else:
                self._exps = np.zeros((0, self.nvars), dtype=np.int64)
                self._coefs = np.zeros(0)
        return self._exps, self._coefs

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        exps, coefs = self._compile()
        if len(coefs) == 0:
            out = np.zeros(X.shape[0])
        else:
            out = np.zeros(X.shape[0])
            for e, c in zip(exps, coefs):
                term = np.full(X.shape[0], c)
                for i in np.nonzero(e)[0]:
                    term = term * X[:, i] ** e[i]
                out += term
        return out[0] if single else out

    # serialisation
    def to_json(self, names: Sequence[str]) -> list:
        out = []
        for m, c in sorted(self.terms.items()):
            mono = {names[i]: e for i, e in enumerate(m) if e}
            out.append({"c": float(c), "monomial": mono})
        return out

    @classmethod
    def from_json(cls, data: Iterable[Mapping], names: Sequence[str]) -> "Poly":
        index = {n: i for i, n in enumerate(names)}
        terms: dict = {}
        for entry in data:
            mono = [0] * len(names)
            for name, e in entry.get("monomial", {}).items():
                if name not in index:
                    raise KeyError(f"unknown coordinate name {name!r}")
                mono[index[name]] += int(e)
            key = tuple(mono)
            terms[key] = terms.get(key, Fraction(0)) + _frac(entry["c"])
        return cls(len(names), terms)
