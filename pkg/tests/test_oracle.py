import math

import numpy as np
import pytest

from carnot_potentials import functions as fn, geometry as geo
from carnot_potentials.errors import BoundingBoxError
from carnot_potentials.geometry import cofactor_normal
from carnot_potentials.oracle import (RngStream, fd_apply_field, fd_sublaplacian,
                                      mc_volume_integrate, refine_surface_grid)


def test_fd_field_examples(e3, h1):
    assert abs(fd_apply_field(e3, 0, fn.monomial([2, 0, 0]), [2.0, 0, 0])[0] - 4) < 1e-9
    assert abs(fd_apply_field(h1, 0, fn.monomial([0, 0, 1]), [0.0, 1, 0])[0] + 0.5) < 1e-8


def test_fd_sublaplacian_example(h1, rng):
    z2 = fn.monomial([2, 0, 0]) + fn.monomial([0, 2, 0])
    assert np.allclose(fd_sublaplacian(h1, z2, rng.normal(size=(5, 3))), 4, atol=1e-5)


def test_fd_accepts_plain_callables(h1):
    f = lambda X: np.atleast_2d(X)[:, 2]
    assert np.isclose(fd_apply_field(h1, 1, f, [1.0, 0, 0])[0], 0.5)


def test_rng_stream_deterministic():
    a = RngStream(42).uniform(100_000, 2)
    b = RngStream(42).uniform(100_000, 2)
    assert np.array_equal(a, b)
    assert not np.array_equal(RngStream(42).split(1).uniform(10, 2), RngStream(42).uniform(10, 2))


def test_mc_unit_ball(e3):
    dom = geo.euclidean_ball(e3)
    m, s = mc_volume_integrate(dom, lambda X: np.ones(len(X)), 10 ** 6, RngStream(1))
    assert abs(m - 4 * math.pi / 3) < 3 * s
    m2, s2 = mc_volume_integrate(dom, lambda X: np.ones(len(X)), 10 ** 6, RngStream(1))
    assert (m, s) == (m2, s2)


def test_mc_singular(e3):
    dom = geo.euclidean_ball(e3)
    m, s = mc_volume_integrate(dom, lambda X: 1 / np.linalg.norm(X, axis=1), 10 ** 6, RngStream(2))
    assert abs(m - 2 * math.pi) < 3 * s


def test_mc_gauge_ball_matches_quadrature(h1):
    dom = geo.gauge_ball(h1)
    q = geo.volume_integrate(dom, lambda X: np.ones(len(X))).value
    m, s = mc_volume_integrate(dom, lambda X: np.ones(len(X)), 10 ** 6, RngStream(3))
    assert abs(m - q) < 3 * s


def test_mc_bounding_box_error(e3):
    class Thin:
        def bounding_box(self):
            return np.full(3, -1.0), np.full(3, 1.0)

        def contains(self, X):
            return np.linalg.norm(X, axis=1) < 0.05

    with pytest.raises(BoundingBoxError):
        mc_volume_integrate(Thin(), lambda X: np.ones(len(X)), 10 ** 4, RngStream(0))


def _form_integrand(group, k, orientation, phi):
    def f(y, J):
        return orientation * phi(y) * np.einsum("mj,mj->m", group.fields(y)[:, k], cofactor_normal(J))
    return f


def test_midpoint_order(e3):
    dom = geo.euclidean_ball(e3)
    P = dom.patches[0]
    tab = refine_surface_grid(P, lambda y, J: np.exp(y[:, 0]) * np.linalg.norm(cofactor_normal(J), axis=1))
    assert tab.observed_order >= 1.9
    assert tab.monotone


@pytest.mark.parametrize("kind", ["euclidean", "gauge"])
def test_form_density_cross_check(e3, h1, kind):
    g = e3 if kind == "euclidean" else h1
    dom = geo.euclidean_ball(g) if kind == "euclidean" else geo.gauge_ball(g)
    phi = lambda y: np.cos(y[:, 0]) + y[:, 1] * y[:, 2]
    for k in range(g.N1):
        quad = geo.surface_integrate_form(dom, phi, k=k, order=24, estimate=False).value
        limit = sum(refine_surface_grid(P, _form_integrand(g, k, P.orientation, phi), levels=5).limit
                    for P in dom.patches)
        assert abs(quad - limit) < 1e-4


def test_closed_surface_constant(h1):
    dom = geo.gauge_ball(h1)
    one = lambda y: np.ones(len(y))
    for k in range(2):
        total = sum(refine_surface_grid(P, _form_integrand(h1, k, P.orientation, one)).limit
                    for P in dom.patches)
        assert abs(total) < 1e-5


def test_levels_check():
    with pytest.raises(ValueError):
        refine_surface_grid(None, None, levels=2)
