from fractions import Fraction

import numpy as np
import pytest

from carnot_potentials.polynomial import Poly


def test_arithmetic_and_eval():
    x, y = Poly.var(0, 2), Poly.var(1, 2)
    p = (x + y) ** 2 - x * x
    X = np.array([[1.0, 2.0], [-0.5, 3.0]])
    assert np.allclose(p(X), (X[:, 0] + X[:, 1]) ** 2 - X[:, 0] ** 2)
    assert p.degree() == 2
    assert p.variables() == {0, 1}


def test_exact_coefficients():
    x = Poly.var(0, 1)
    p = x * Fraction(1, 3) + x * Fraction(2, 3)
    assert p == x
    assert (p - x).is_zero()


def test_deriv_and_compose():
    x, y = Poly.var(0, 2), Poly.var(1, 2)
    p = x ** 3 * y
    assert p.deriv(0) == x ** 2 * y * 3
    assert p.deriv(1) == x ** 3
    # p(y, x) swaps roles
    q = p.compose([y, x])
    assert q == y ** 3 * x


def test_weighted_degree():
    # x^2 + t is homogeneous of degree 2 when t has weight 2
    x, t = Poly.var(0, 2), Poly.var(1, 2)
    assert (x * x + t).weighted_degrees([1, 2]) == {2}


def test_json_roundtrip():
    names = ["a", "b"]
    p = Poly.var(0, 2) ** 2 * Fraction(1, 2) - Poly.var(1, 2) + 3
    assert Poly.from_json(p.to_json(names), names) == p


def test_unknown_name():
    with pytest.raises(KeyError):
        Poly.from_json([{"c": 1, "monomial": {"z": 1}}], ["a"])
