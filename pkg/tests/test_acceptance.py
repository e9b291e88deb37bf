"""Acceptance criteria at desk scale; one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also collected in the terminal summary.
"""
import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest

from carnot_potentials import build_group, functions as fn, geometry as geo, identities as idn
from carnot_potentials import potentials as pot
from carnot_potentials.cli import run_suite

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

E3 = build_group("euclidean:3")
H1 = build_group("heisenberg:1")


@pytest.fixture(scope="module")
def fs():
    return {"e3": pot.fundamental_solution_for(E3), "h1": pot.fundamental_solution_for(H1)}


def _r2():
    return fn.monomial([2, 0, 0]) + fn.monomial([0, 2, 0]) + fn.monomial([0, 0, 2])


def _P():
    # |z|^4 + 16 t^2, the fourth power of the H^1 gauge
    z2 = fn.monomial([2, 0, 0]) + fn.monomial([0, 2, 0])
    return z2 * z2 + fn.monomial([0, 0, 2]).scale(16.0)


def _sq(f):
    return f * f


def _smooth(seed, kind=0):
    p = fn.random_poly(3, 2, seed=seed, scale=0.5)
    return fn.exp_of(p) if kind == 0 else fn.sin_of(p)


def _fails(reports):
    return [r.experiment + ":" + r.worst()[0] for r in reports if not r.passed]


# 1 ------------------------------------------------------------------------
def test_c1_divergence(verdict):
    doms = {"e3_box": geo.box(E3), "e3_ball": geo.euclidean_ball(E3), "h1_gball": geo.gauge_ball(H1)}
    bad, worst, slowest, rate = [], 0.0, 0.0, math.inf
    for name, dom in doms.items():
        tol = 1e-6 if name.startswith("e3") else 1e-4
        for s in range(5):
            fields = [fn.random_poly(3, 3, seed=10 * s + k) for k in range(2 if name == "h1_gball" else 3)]
            t0 = time.perf_counter()
            r = idn.divergence_residual(dom, fields)
            slowest = max(slowest, time.perf_counter() - t0)
            res = max(r.residuals.values())
            worst = max(worst, res / tol)
            rt = idn.halving_rate(r.refinement_history)
            rate = min(rate, rt)
            if res >= tol or rt < 2.0:
                bad.append(f"{name}/{s}")
    ok = not bad and slowest < 10
    verdict("C1", ok, f"worst residual/tol {worst:.2e}, min halving rate {rate:.3g}, "
            f"slowest {slowest:.2f}s {bad}")
    assert ok


# 2 ------------------------------------------------------------------------
def test_c2_green(verdict):
    t0 = time.perf_counter()
    reports = []
    for dom in (geo.euclidean_ball(E3), geo.gauge_ball(H1)):
        for s in range(10):
            u, v = _smooth(100 + s, 0), _smooth(200 + s, 1)
            for which in ("first", "second"):
                reports.append(idn.green_residual(dom, u, v, which))
    secs = time.perf_counter() - t0
    e = max(r.residuals["residual"] for r in reports[:20])
    h = max(r.residuals["residual"] for r in reports[20:])
    ok = e < 1e-5 and h < 1e-3 and secs < 30
    verdict("C2", ok, f"max residual R^3 {e:.2e}, H^1 {h:.2e}, {secs:.1f}s")
    assert ok


# 3 ------------------------------------------------------------------------
def test_c3_mean_value(verdict, fs):
    rng = np.random.default_rng(3)
    worst = {}
    for key, dom in (("e3", geo.euclidean_ball(E3)), ("h1", geo.gauge_ball(H1))):
        g = dom.group
        G = g.gauge() if key == "h1" else None
        for side, scales in (("in", (0.1, 0.8)), ("out", (1.3, 2.0))):
            for _ in range(5):
                w = rng.normal(size=3)
                s = rng.uniform(*scales)
                if key == "e3":
                    x = s * w / np.linalg.norm(w)
                else:
                    x = g.dilate(w, s / G.d(w[None])[0])
                r = idn.mean_value_check(fs[key], dom, x)
                assert r.values["target"] == (1.0 if side == "in" else 0.0)
                worst[f"{key}_{side}"] = max(worst.get(f"{key}_{side}", 0), r.residuals["residual"])
    ok = max(worst.values()) < 1e-3
    verdict("C3", ok, " ".join(f"{k}={v:.1e}" for k, v in worst.items()))
    assert ok


# 4 ------------------------------------------------------------------------
def test_c4_beta(verdict):
    out = {}
    for name in ("euclidean:3", "euclidean:5", "heisenberg:1"):
        out[name] = idn.beta_calibration_check(build_group(name))
    e = max(out[n].residuals["closed_form"] for n in ("euclidean:3", "euclidean:5"))
    sp = out["heisenberg:1"].residuals["spread"]
    ok = e < 1e-3 and sp < 5e-3
    verdict("C4", ok, f"R^3/R^5 relative error {e:.1e}, H^1 beta {out['heisenberg:1'].values['beta']:.6f} "
            f"spread {sp:.1e}")
    assert ok


# 5 ------------------------------------------------------------------------
def test_c5_jump_relations(verdict, fs):
    dens = {"e3": [fn.constant(1.0, 3), _smooth(5, 0), _smooth(6, 1)],
            "h1": [fn.constant(1.0, 3), _smooth(5, 0), _smooth(6, 1)]}
    reports, Js = [], []
    for key, dom in (("e3", geo.euclidean_ball(E3)), ("h1", geo.gauge_ball(H1))):
        x0s = idn.boundary_points(dom, 10, seed=5)
        for u in dens[key]:
            r = idn.jump_relations_check(fs[key], dom, u, x0s)
            reports.append(r)
            if key == "e3":
                Js += [p["J"] for p in r.values["points"]]
    worst = max(max(r.residuals.values()) for r in reports)
    jerr = max(abs(J - 0.5) for J in Js)
    ok = not _fails(reports) and jerr < 1e-2
    verdict("C5", ok, f"worst relation residual {worst:.1e}, max |J - 1/2| on the sphere {jerr:.1e}")
    assert ok


# 6 ------------------------------------------------------------------------
def test_c6_single_layer(verdict, fs):
    reports = []
    for key, dom in (("e3", geo.euclidean_ball(E3)), ("h1", geo.gauge_ball(H1))):
        for x0 in idn.boundary_points(dom, 3, seed=6):
            for j in range(2):
                reports.append(idn.single_layer_continuity(fs[key], dom, _smooth(7, 0), x0, j=j))
    gb = geo.gauge_ball(H1)
    poles = [idn.single_layer_pole(fs["h1"], gb, fn.monomial([1, 0, 0]), j=0),
             idn.single_layer_pole(fs["h1"], gb, _smooth(8, 0), j=1)]
    drift = max(r.residuals["drift"] for r in poles)
    ok = not _fails(reports + poles)
    verdict("C6", ok, f"{len(reports)} monotone approach ladders, pole drift {drift:.1e}")
    assert ok


# 7 ------------------------------------------------------------------------
def _decreasing(hist):
    # steps that start at the rounding floor count as converged
    r = [v for _, v in hist]
    return all(b < a or a <= idn.HALVING_FLOOR for a, b in zip(r, r[1:]))


def test_c7_kac(verdict, fs):
    t0 = time.perf_counter()
    re = idn.kac_residual(fs["e3"], geo.euclidean_ball(E3), fn.euclidean_bump([0.1, 0.0, 0.0], 0.6),
                          n_points=10)
    rh = idn.kac_residual(fs["h1"], geo.gauge_ball(H1), fn.gauge_bump(H1, [0.0, 0, 0], 0.6),
                          n_points=10)
    secs = time.perf_counter() - t0
    ok = (re.passed and rh.passed and _decreasing(re.refinement_history)
          and _decreasing(rh.refinement_history) and secs < 300)
    verdict("C7", ok, f"R^3 {max(re.residuals.values()):.1e} H^1 {max(rh.residuals.values()):.1e} "
            f"histories {[f'{v:.1e}' for _, v in rh.refinement_history]}, {secs:.0f}s")
    assert ok


# 8 ------------------------------------------------------------------------
def test_c8_iterated(verdict, fs):
    dom = geo.euclidean_ball(E3)
    f = fn.euclidean_bump([0.0, 0, 0], 0.6)
    reps = [idn.kac_residual(fs["e3"], dom, f, m=2, i=i, n_points=4) for i in (0, 1)]
    chk = idn.iterated_kernel_check(fs["e3"], dom, m=2)
    ok = all(r.passed and _decreasing(r.refinement_history) for r in reps) and chk.passed
    verdict("C8", ok, f"m=2 i=0 {max(reps[0].residuals.values()):.1e}, i=1 "
            f"{max(reps[1].residuals.values()):.1e}, L eps_2 vs eps worst "
            f"{max(chk.residuals.values()):.1e}")
    assert ok


# 9 ------------------------------------------------------------------------
def test_c9_representation(verdict, fs):
    reports = []
    cases = {
        "e3": (geo.euclidean_ball(E3), [("full", _smooth(9, 0)),
                                        ("harmonic", fn.monomial([1, 1, 0])),
                                        ("dirichlet_zero", fn.constant(1.0, 3) - _r2()),
                                        ("neumann_zero", _sq(_r2() - fn.constant(1.0, 3)))]),
        "h1": (geo.gauge_ball(H1), [("full", _smooth(9, 0)),
                                    ("harmonic", fn.monomial([1, 1, 0])),
                                    ("dirichlet_zero", fn.constant(1.0, 3) - _P()),
                                    ("neumann_zero", _sq(_P() - fn.constant(1.0, 3)))]),
    }
    for key, (dom, items) in cases.items():
        pts = idn.interior_pairs(dom, 5, seed=9)
        for variant, u in items:
            for y, _ in pts:
                reports.append(idn.representation_residual(fs[key], dom, u, y, variant))
    worst = max(r.residuals["residual"] for r in reports)
    ok = not _fails(reports)
    verdict("C9", ok, f"{len(reports)} evaluations, worst residual {worst:.1e} {_fails(reports)}")
    assert ok


# 10 -----------------------------------------------------------------------
def test_c10_energy(verdict):
    one = fn.constant(1.0, 3)
    q = fn.exp_of(fn.monomial([1, 0, 0]))
    reports = []
    for dom, P in ((geo.euclidean_ball(E3), _sq(_r2())), (geo.gauge_ball(H1), _P())):
        # P is the fourth power of the gauge, so P = 1 on the unit sphere of either domain
        top = fn.monomial([0, 0, 1]).scale(4.0 if not dom.group.is_euclidean else 1.0)
        reports += [
            idn.energy_identity_residual(dom, one - P, "dirichlet"),
            idn.energy_identity_residual(dom, one - P, "schrodinger", q=q),
            idn.energy_identity_residual(dom, _sq(P - one), "neumann"),
            idn.energy_identity_residual(dom, fn.exp_of(P, -1.0), "robin"),
            idn.energy_identity_residual(dom, fn.exp_of(P, -3.0) * fn.positive_part_power(top, 4),
                                         "mixed"),
        ]
    closed = idn.energy_identity_residual(geo.euclidean_ball(E3), one - _r2(), "dirichlet")
    worst = max(r.residuals["residual"] for r in reports)
    nontrivial = all(r.values["energy"] > 1e-3 for r in reports)
    ok = not _fails(reports) and nontrivial and closed.residuals["residual"] < 1e-6
    verdict("C10", ok, f"5 flavors x 2 groups worst {worst:.1e}, closed form "
            f"{closed.residuals['residual']:.1e} {_fails(reports)}")
    assert ok


# 11 -----------------------------------------------------------------------
def _hardy_functions(g):
    out = []
    for s in range(5):
        out.append(_smooth(300 + s, 0))
        out.append(_smooth(400 + s, 1) * fn.exp_of(fn.random_poly(3, 2, seed=500 + s)))
    return out


def test_c11_hardy(verdict):
    doms = [geo.gauge_ball(H1), geo.gauge_ball(H1, center=[1.5, 0, 0], radius=0.5)]
    reports = []
    for k, u in enumerate(_hardy_functions(H1)):
        for alpha in (0.0, 1.0):
            reports.append(idn.hardy_gap(doms[k % 2], u, alpha=alpha))
    worst = min(r.values["gap"] for r in reports)
    bump = idn.hardy_gap(geo.euclidean_ball(E3), fn.euclidean_bump([0.1, 0.0, 0.0], 0.6))
    wit = idn.hardy_gap(geo.euclidean_ball(E3, radius=2.0), fn.hardy_witness(3, 9.0), order=32)
    ok = (not _fails(reports) and bump.values["constant"] == 0.25 and bump.values["ratio"] >= 0.25
          and wit.values["ratio"] >= 0.25 and wit.values["ratio"] <= 0.30)
    verdict("C11", ok, f"{len(reports)} H^1 gaps, smallest {worst:.2e}; R^3 constant "
            f"{bump.values['constant']}, bump ratio {bump.values['ratio']:.3f}, witness ratio "
            f"{wit.values['ratio']:.4f}")
    assert ok


# 12 -----------------------------------------------------------------------
def test_c12_sign(verdict):
    far = geo.gauge_ball(H1, center=[1.5, 0, 0], radius=0.5)
    reports = [idn.sign_experiment(far, "constant"),
               idn.sign_experiment(far, "constant", alpha=1.0),
               idn.sign_experiment(geo.euclidean_ball(E3, center=[2.0, 0, 0], radius=0.5), "constant"),
               idn.sign_experiment(far, "exp_decay", R=4.0)]
    B = [r.values["boundary_term"] for r in reports]
    mis = max(r.residuals["volume_mismatch"] for r in reports)
    ok = not _fails(reports) and all(b < 0 for b in B[:3]) and B[3] > 0
    verdict("C12", ok, f"constant-u terms {', '.join(f'{b:.3e}' for b in B[:3])}, exp-decay "
            f"{B[3]:.3e}, worst volume mismatch {mis:.1e}")
    assert ok


# 13 -----------------------------------------------------------------------
def test_c13_uncertainty(verdict):
    reports = []
    off_axis = geo.gauge_ball(H1, center=[1.5, 0, 0], radius=0.5)
    for s in range(10):
        u = _smooth(600 + s, s % 2)
        reports.append(idn.uncertainty_gap(geo.euclidean_ball(E3), u, "UP1"))
        reports.append(idn.uncertainty_gap(geo.euclidean_ball(E3), u, "UP2"))
        reports.append(idn.uncertainty_gap(geo.gauge_ball(H1), u, "UP1"))
        reports.append(idn.uncertainty_gap(off_axis, u, "UP2"))
    finite = all(math.isfinite(r.values["lhs"]) for r in reports)
    worst = min(r.values["gap"] for r in reports)
    ok = not _fails(reports) and finite
    verdict("C13", ok, f"{len(reports)} inequalities, smallest gap {worst:.2e}")
    assert ok


# 14 -----------------------------------------------------------------------
def test_c14_perimeter(verdict):
    doms = {"e3_ball": geo.euclidean_ball(E3), "e3_box": geo.box(E3),
            "h1_gauge_ball": geo.gauge_ball(H1), "h1_ball": geo.euclidean_ball(H1),
            "h1_box": geo.box(H1), "h1_shifted": geo.gauge_ball(H1, center=[0.5, -0.3, 0.2])}
    phis = [_smooth(700 + s, s % 2) for s in range(5)]
    worst = {}
    bad = []
    for name, dom in doms.items():
        r = idn.perimeter_equivalence(dom, phis)
        worst[name] = max(r.residuals.values())
        if not r.passed:
            bad.append(name)
    ok = not bad
    verdict("C14", ok, " ".join(f"{k}={v:.0e}" for k, v in worst.items()))
    assert ok


# 15 -----------------------------------------------------------------------
def _tree_equal(a, b):
    cmp = filecmp.dircmp(a, b, ignore=["timing.csv"])
    if cmp.left_only or cmp.right_only:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors


def test_c15_determinism(verdict, tmp_path):
    manifest = CONFIGS / "determinism.json"
    dirs = []
    for w in (1, 4, 8):
        out = tmp_path / f"w{w}"
        run_suite(manifest, out, workers=w)
        dirs.append(out)
    n = len(list(dirs[0].glob("*.json")))
    ok = n > 0 and _tree_equal(dirs[0], dirs[1]) and _tree_equal(dirs[0], dirs[2])
    verdict("C15", ok, f"{n} reports byte-identical across 1, 4 and 8 workers")
    assert ok
