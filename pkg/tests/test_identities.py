import json
import math

import numpy as np
import pytest

from carnot_potentials import functions as fn, geometry as geo, identities as idn
from carnot_potentials.errors import (CapabilityError, ParameterError, PreconditionError,
                                      SupportError, UnsupportedDimensionError)


def _r2(N=3):
    out = fn.monomial([2] + [0] * (N - 1))
    for i in range(1, N):
        e = [0] * N
        e[i] = 2
        out = out + fn.monomial(e)
    return out


def test_report_pass_logic():
    r = idn.make_report("x", {"a": 1}, {"p": 1e-3, "q": 0.5}, {"p": 1e-2, "q": 1.0}, [(4, 1.0)])
    assert r.passed
    assert r.worst() == ("q", 0.5, 1.0)
    r = idn.make_report("x", {"a": 1}, {"p": 1e-3}, {"p": 1e-2}, [], tol_scale=0.01)
    assert not r.passed
    r = idn.make_report("x", {}, {"p": math.nan}, {"p": 1.0}, [])
    assert not r.passed
    assert r.to_json()["residuals"]["p"] == "nan"
    r = idn.make_report("x", {}, {"p": 0.3}, {"p": 0.1}, [], tol={"p": 0.5})
    assert r.passed


def test_report_digest_stable():
    a = idn.make_report("x", {"b": [1.0, 2.0], "a": 1}, {}, {}, [])
    b = idn.make_report("x", {"a": 1, "b": [1.0, 2.0]}, {}, {}, [])
    assert a.digest == b.digest
    json.dumps(a.to_json())


def test_ladder_and_rate():
    assert idn.ladder(16) == [4, 8, 16]
    assert idn.halving_rate([(4, 1e-3), (8, 4e-4), (16, 1e-4)]) == pytest.approx(2.5)
    assert idn.halving_rate([(4, 1e-12), (8, 3e-12)]) == math.inf


def test_divergence_constants(ball_e3, gball_h1):
    for dom in (ball_e3, gball_h1):
        one = fn.constant(1.0, 3)
        r = idn.divergence_residual(dom, [one] * dom.group.N1)
        assert all(v < 1e-8 for v in r.residuals.values())


def test_divergence_linear_field(ball_e3):
    zero = fn.constant(0.0, 3)
    r = idn.divergence_residual(ball_e3, [fn.monomial([1, 0, 0]), zero, zero])
    assert r.residuals["k1"] < 1e-6
    assert r.values["volume_side"][0] == pytest.approx(4 * math.pi / 3, abs=1e-10)
    assert r.values["boundary_side"][0] == pytest.approx(4 * math.pi / 3, abs=1e-10)


def test_green_examples(e3, ball_e3):
    r = idn.green_residual(ball_e3, fn.monomial([1, 1, 0]), fn.constant(1.0, 3))
    assert r.residuals["residual"] < 1e-10
    assert abs(r.values["boundary_side"]) < 1e-10
    r = idn.green_residual(ball_e3, _r2(), fn.monomial([1, 0, 0]), "second")
    assert r.residuals["residual"] < 1e-6
    assert abs(r.values["volume_side"]) < 1e-10


def test_green_u_equals_v_is_energy(ball_e3):
    u = fn.random_poly(3, 3, seed=2)
    g = idn.green_residual(ball_e3, u, u, "first")
    assert g.passed


def test_mean_value_examples(fs_e3, ball_e3):
    assert idn.mean_value_check(fs_e3, ball_e3, [0.0, 0, 0]).residuals["residual"] < 1e-6
    r = idn.mean_value_check(fs_e3, ball_e3, [2.0, 0, 0])
    assert r.values["target"] == 0 and r.residuals["residual"] < 1e-4


def test_representation_examples(fs_e3, ball_e3):
    x = np.array([0.2, -0.1, 0.3])
    r = idn.representation_residual(fs_e3, ball_e3, fn.monomial([1, 1, 0]), x, "harmonic")
    assert r.residuals["residual"] < 1e-3
    u = fn.constant(1.0, 3) - _r2()
    r = idn.representation_residual(fs_e3, ball_e3, u, x, "dirichlet_zero")
    assert r.residuals["residual"] < 1e-3


def test_representation_preconditions(fs_e3, ball_e3):
    x = np.array([0.1, 0.0, 0.0])
    with pytest.raises(PreconditionError):
        idn.representation_residual(fs_e3, ball_e3, _r2(), x, "harmonic")
    with pytest.raises(PreconditionError):
        idn.representation_residual(fs_e3, ball_e3, _r2(), x, "dirichlet_zero")
    with pytest.raises(PreconditionError):
        idn.representation_residual(fs_e3, ball_e3, fn.monomial([1, 0, 0]), x, "neumann_zero")
    with pytest.raises(ParameterError):
        idn.representation_residual(fs_e3, ball_e3, _r2(), x, "sideways")


def test_jump_zero_density(fs_e3, ball_e3):
    x0s = idn.boundary_points(ball_e3, 2, seed=3)
    r = idn.jump_relations_check(fs_e3, ball_e3, fn.constant(0.0, 3), x0s, order=16)
    assert all(v == 0 for v in r.residuals.values())


def test_boundary_points_on_boundary(gball_h1):
    pts = idn.boundary_points(gball_h1, 5, seed=1)
    assert np.allclose(gball_h1.level(np.array(pts)), 0, atol=1e-12)


def test_kac_zero_source(fs_e3, ball_e3):
    r = idn.kac_residual(fs_e3, ball_e3, fn.constant(0.0, 3), n_points=2, order=8)
    assert all(v == 0 for v in r.residuals.values())


def test_kac_errors(fs_e3, ball_e3):
    with pytest.raises(SupportError):
        idn.kac_residual(fs_e3, ball_e3, fn.euclidean_bump([0.0, 0, 0], 0.99), n_points=1)
    with pytest.raises(CapabilityError):
        idn.kac_residual(fs_e3, ball_e3, fn.euclidean_bump([0.0, 0, 0], 0.5), m=3)
    with pytest.raises(ParameterError):
        idn.kac_residual(fs_e3, ball_e3, fn.euclidean_bump([0.0, 0, 0], 0.5), m=2, i=2)


def test_energy_closed_form(ball_e3):
    u = fn.constant(1.0, 3) - _r2()
    r = idn.energy_identity_residual(ball_e3, u, "dirichlet")
    assert r.residuals["residual"] < 1e-6
    # int |grad u|^2 = int 4 r^2 dx = 16 pi / 5, and int u Lu = -6 (4 pi/3 - 4 pi/5) = -16 pi / 5
    assert r.values["energy"] == pytest.approx(16 * math.pi / 5, rel=1e-10)
    assert r.values["u_Lu"] == pytest.approx(-16 * math.pi / 5, rel=1e-10)


def test_energy_constant_neumann(gball_h1):
    r = idn.energy_identity_residual(gball_h1, fn.constant(2.0, 3), "neumann")
    assert all(v == 0 for v in r.values.values())


def test_energy_schrodinger(ball_e3):
    u = fn.constant(1.0, 3) - _r2()
    q = fn.exp_of(fn.monomial([1, 0, 0]))
    r = idn.energy_identity_residual(ball_e3, u, "schrodinger", q=q)
    assert r.residuals["residual"] < 1e-4
    assert r.values["potential"] > 0


def test_energy_preconditions(ball_e3):
    with pytest.raises(PreconditionError):
        idn.energy_identity_residual(ball_e3, _r2(), "dirichlet")
    with pytest.raises(ParameterError):
        idn.energy_identity_residual(ball_e3, _r2(), "schrodinger")
    with pytest.raises(PreconditionError):
        idn.energy_identity_residual(ball_e3, fn.monomial([1, 0, 0]), "neumann")
    with pytest.raises(PreconditionError):
        idn.energy_identity_residual(ball_e3, fn.constant(1.0, 3) - _r2(), "schrodinger",
                                     q=fn.constant(-1.0, 3))
    with pytest.raises(ParameterError):
        idn.energy_identity_residual(ball_e3, _r2(), "periodic")


def test_energy_robin_sign_check(ball_e3):
    # u = exp(-|x|^2): a = -grad u / u = 2x, so sum a_j n_j = 2 > 0 on the sphere
    u = fn.exp_of(_r2(), -1.0)
    assert idn.energy_identity_residual(ball_e3, u, "robin").passed
    bad = lambda Y: -idn.robin_coefficients_from(ball_e3.group, u)(Y)
    with pytest.raises(PreconditionError):
        idn.energy_identity_residual(ball_e3, u, "robin", a=bad)


def test_hardy_zero(gball_h1):
    r = idn.hardy_gap(gball_h1, fn.constant(0.0, 3))
    assert r.values["lhs"] == 0 and r.values["rhs_integral"] == 0 and r.values["boundary_term"] == 0


def test_hardy_parameter_errors(h1, e3, gball_h1):
    u = fn.gauge_bump(h1, [0.0, 0, 0], 0.5)
    with pytest.raises(ParameterError):
        idn.hardy_gap(gball_h1, u, alpha=-2.0)
    shifted = geo.gauge_ball(h1, center=[1.0, 0, 0], radius=1.0)
    with pytest.raises(ParameterError):
        idn.hardy_gap(shifted, u)
    from carnot_potentials import build_group
    g2 = build_group("euclidean:2")
    with pytest.raises(UnsupportedDimensionError):
        idn.hardy_gap(geo.euclidean_ball(g2), fn.constant(0.0, 2))


def test_hardy_classical_constant(ball_e3):
    u = fn.euclidean_bump([0.0, 0, 0], 0.8)
    r = idn.hardy_gap(ball_e3, u)
    assert r.values["boundary_term"] == 0
    assert r.values["constant"] == 0.25
    assert r.values["ratio"] >= 0.25


def test_sign_zero(h1):
    dom = geo.gauge_ball(h1, center=[1.5, 0, 0], radius=0.5)
    r = idn.sign_experiment(dom, "constant", c=0.0)
    assert r.values["boundary_term"] == 0


def test_sign_exp_decay_needs_far_domain(h1):
    with pytest.raises(ParameterError):
        idn.sign_experiment(geo.gauge_ball(h1, center=[1.5, 0, 0], radius=0.5), "exp_decay", R=1.0)
    with pytest.raises(ParameterError):
        idn.sign_experiment(geo.gauge_ball(h1, center=[1.5, 0, 0], radius=0.5), "exp_decay")


def test_uncertainty_zero(gball_h1):
    for which in ("UP1", "UP2"):
        r = idn.uncertainty_gap(gball_h1, fn.constant(0.0, 3), which)
        assert r.values["lhs"] == 0 and r.values["rhs"] == 0


def test_uncertainty_classical(ball_e3):
    u = fn.euclidean_bump([0.1, 0, 0], 0.6)
    r = idn.uncertainty_gap(ball_e3, u, "UP2")
    t = r.values
    assert t["boundary_integral"] == 0
    assert t["weight_integral"] * t["gradient_integral"] >= 0.25 * t["mass_integral"] ** 2
    with pytest.raises(ParameterError):
        idn.uncertainty_gap(ball_e3, u, "UP3")


def test_up2_axis_is_infinite(gball_h1, h1):
    r = idn.uncertainty_gap(gball_h1, fn.gauge_bump(h1, [0.0, 0, 0], 0.5), "UP2", order=9)
    assert r.values["lhs"] == math.inf
    assert r.passed


def test_beta_check(e3, h1):
    assert idn.beta_calibration_check(e3).passed
    r = idn.beta_calibration_check(h1)
    assert r.passed and "closed_form" not in r.residuals


def test_single_layer_continuity_report(fs_e3, ball_e3):
    x0 = np.array([0.0, 0.6, 0.8])
    r = idn.single_layer_continuity(fs_e3, ball_e3, fn.exp_of(fn.monomial([1, 0, 0])), x0, j=1)
    d = r.values["differences"]
    assert r.passed and all(b < a for a, b in zip(d, d[1:]))


def test_perimeter_report(gball_h1):
    r = idn.perimeter_equivalence(gball_h1, [fn.monomial([0, 1, 1])])
    assert r.passed and set(r.residuals) == {"f0_k1", "f0_k2"}


def test_iterated_check_needs_m2(fs_e3, ball_e3):
    with pytest.raises(ParameterError):
        idn.iterated_kernel_check(fs_e3, ball_e3, m=1)


def test_experiment_table():
    expected = {"divergence_residual", "green_residual", "mean_value_check",
                "representation_residual", "jump_relations_check", "kac_residual",
                "energy_identity_residual", "hardy_gap", "sign_experiment", "uncertainty_gap"}
    assert expected <= set(idn.EXPERIMENTS)
