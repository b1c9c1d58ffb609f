import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodal_lab.eigenfunctions import (FamilyLadder, analytic_nodal_measure, build_ladder, converged_rule,
                                      geometric_indices, highest_weight_harmonic, legendre_eval, legendre_roots,
                                      make_field, torus_product_mode, zonal_harmonic)
from nodal_lab.geometry import build_sphere_quadrature, icosphere
from nodal_lab.integrals import Integrand, laplacian_fd, volume_integral
from nodal_lab.spectral import FemField

# -- Legendre ------------------------------------------------------------------


@pytest.mark.parametrize("l, x, p, dp", [(0, 0.3, 1.0, 0.0), (1, 0.3, 0.3, 1.0), (2, 0.5, -0.125, 1.5)])
def test_legendre_eval_examples(l, x, p, dp):
    val, der = legendre_eval(l, x)
    assert val == pytest.approx(p, abs=1e-15)
    assert der == pytest.approx(dp, abs=1e-15)


def test_legendre_eval_matches_numpy():
    x = np.linspace(-1, 1, 101)
    for l in (3, 7, 20, 50):
        c = np.zeros(l + 1)
        c[l] = 1.0
        p, dp = legendre_eval(l, x)
        assert np.allclose(p, np.polynomial.legendre.legval(x, c), atol=1e-12)
        assert np.allclose(dp, np.polynomial.legendre.legval(x, np.polynomial.legendre.legder(c)),
                           atol=1e-9 * l * l)


def test_legendre_endpoint_values():
    for l in range(12):
        p, dp = legendre_eval(l, np.array([1.0, -1.0]))
        assert np.allclose(p, [1.0, (-1.0) ** l])
        assert np.allclose(dp, [l * (l + 1) / 2, (-1.0) ** (l + 1) * l * (l + 1) / 2])


def test_legendre_eval_rejects_outside_interval():
    with pytest.raises(ValueError):
        legendre_eval(3, 1.5)


def test_legendre_roots_examples():
    assert np.allclose(legendre_roots(1), [0.0], atol=1e-15)
    assert np.allclose(legendre_roots(2), [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-12)
    r5 = legendre_roots(5)
    assert len(r5) == 5
    assert np.allclose(r5, -r5[::-1], atol=1e-15)


@pytest.mark.parametrize("l", [3, 8, 17, 40, 64])
def test_legendre_roots_against_gauss_nodes(l):
    roots = legendre_roots(l)
    assert np.all(np.diff(roots) > 0)
    assert np.max(np.abs(roots - np.polynomial.legendre.leggauss(l)[0])) <= 1e-12


# -- fields ------------------------------------------------------------------------


def test_zonal_basic_examples():
    e1 = zonal_harmonic(1)
    assert e1.eigenvalue == 2
    pts = np.array([[0.4, 1.0], [2.0, 5.0]])
    assert np.allclose(e1.evaluate(pts), math.sqrt(3 / (4 * math.pi)) * np.cos(pts[:, 0]))
    assert zonal_harmonic(2).eigenvalue == 6


def test_highest_weight_k1_is_rotated_l1_harmonic():
    q1 = highest_weight_harmonic(1)
    pts = np.array([[0.4, 1.0], [2.0, 5.0], [1.3, 0.2]])
    assert q1.eigenvalue == 2
    assert np.allclose(q1.evaluate(pts), math.sqrt(3 / (4 * math.pi)) * np.sin(pts[:, 0]) * np.cos(pts[:, 1]))


def test_torus_mode_values():
    e = torus_product_mode(3, 4)
    assert e.eigenvalue == 25
    p = np.array([[0.3, 0.7]])
    assert e.evaluate(p)[0] == pytest.approx(math.sin(0.9) * math.sin(2.8) / math.pi, rel=1e-15)


@pytest.mark.parametrize("family, index", [("zonal", 1), ("zonal", 7), ("zonal", 33), ("highest_weight", 1),
                                           ("highest_weight", 12), ("highest_weight", 40),
                                           ("torus_product", (1, 1)), ("torus_product", (5, 12))])
def test_unit_l2_norm(family, index):
    f = make_field(family, index)
    assert volume_integral(f, converged_rule(f), Integrand.E_SQUARED) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("l", [1, 4, 15])
def test_zonal_norm_under_stated_rule(l):
    rule = build_sphere_quadrature(2 * l, 4 * l)
    assert abs(volume_integral(zonal_harmonic(l), rule, "ESquared") - 1.0) <= 1e-8


@pytest.mark.parametrize("family, index", [("zonal", 10), ("highest_weight", 8), ("torus_product", (3, 4)),
                                           ("zonal", 40), ("highest_weight", 40), ("torus_product", (13, 40))])
def test_green_identity(family, index):
    f = make_field(family, index)
    grad = volume_integral(f, converged_rule(f), Integrand.GRAD_SQUARED)
    assert abs(grad - f.eigenvalue) <= 1e-6 * f.eigenvalue


def test_highest_weight_green_identity_k8_is_72():
    q = highest_weight_harmonic(8)
    assert volume_integral(q, converged_rule(q), "GradSquared") == pytest.approx(72.0, rel=1e-6)


def _interior_points(rng, family, n=100):
    if family == "torus_product":
        return rng.uniform(0, 2 * math.pi, (n, 2))
    return np.column_stack([rng.uniform(0.05, math.pi - 0.05, n), rng.uniform(0, 2 * math.pi, n)])


@pytest.mark.parametrize("family", ["zonal", "highest_weight", "torus_product"])
def test_finite_difference_eigen_property(family):
    rng = np.random.default_rng(7)
    for i in (1, 2, 5, 13, 27, 40):
        f = make_field(family, (i, max(1, 40 - i)) if family == "torus_product" else i)
        pts = _interior_points(rng, family)
        defect = laplacian_fd(f.evaluate, f.chart, pts, 1e-4) + f.eigenvalue * f.evaluate(pts)
        assert np.max(np.abs(defect)) <= 1e-4 * f.eigenvalue * f.sup_norm


def test_gradient_components_match_finite_differences():
    rng = np.random.default_rng(3)
    for f in (zonal_harmonic(6), highest_weight_harmonic(5), torus_product_mode(2, 3)):
        pts = _interior_points(rng, f.family, 20)
        comps, norm = f.gradient(pts)
        h = 1e-6
        d1 = (f.evaluate(pts + [h, 0]) - f.evaluate(pts - [h, 0])) / (2 * h)
        d2 = (f.evaluate(pts + [0, h]) - f.evaluate(pts - [0, h])) / (2 * h)
        assert np.allclose(comps[:, 0], d1, atol=1e-6 * f.sup_norm * f.eigenvalue)
        assert np.allclose(comps[:, 1], d2, atol=1e-6 * f.sup_norm * f.eigenvalue)
        assert np.allclose(norm**2, f.gradient_norm_sq(pts))


def test_sup_norms():
    assert zonal_harmonic(9).sup_norm == pytest.approx(math.sqrt(19 / (4 * math.pi)))
    assert torus_product_mode(2, 5).sup_norm == pytest.approx(1 / math.pi)
    q = highest_weight_harmonic(6)
    t = np.linspace(0.01, math.pi - 0.01, 2001)
    assert q.sup_norm == pytest.approx(np.max(np.abs(q.evaluate(np.column_stack([t, 0 * t])))), rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["zonal", "highest_weight", "torus_product"]), st.integers(1, 30),
       st.floats(0.01, 50.0))
def test_scale_equivariance(family, i, c):
    f = make_field(family, (i, i + 1) if family == "torus_product" else i)
    g = f.scaled(c)
    rng = np.random.default_rng(i)
    pts = _interior_points(rng, family, 25)
    assert np.allclose(g.evaluate(pts), c * f.evaluate(pts), rtol=1e-13, atol=0)
    assert np.allclose(g.gradient(pts)[0], c * f.gradient(pts)[0], rtol=1e-13, atol=0)
    assert np.array_equal(np.sign(g.evaluate(pts)), np.sign(f.evaluate(pts)))
    assert g.eigenvalue == f.eigenvalue


# -- analytic nodal measures ------------------------------------------------------


def test_analytic_nodal_measure_examples():
    assert analytic_nodal_measure(zonal_harmonic(1)) == pytest.approx(2 * math.pi, rel=1e-14)
    z2 = analytic_nodal_measure(zonal_harmonic(2))
    assert z2 == pytest.approx(4 * math.pi * math.sqrt(2 / 3), rel=1e-12)
    assert z2 == pytest.approx(10.2625, abs=5e-3)
    assert analytic_nodal_measure(highest_weight_harmonic(7)) == pytest.approx(14 * math.pi, rel=1e-14)
    assert analytic_nodal_measure(highest_weight_harmonic(2)) == pytest.approx(4 * math.pi, rel=1e-14)
    assert analytic_nodal_measure(torus_product_mode(1, 1)) == pytest.approx(8 * math.pi, rel=1e-14)
    assert analytic_nodal_measure(torus_product_mode(3, 4)) == pytest.approx(28 * math.pi, rel=1e-14)


def test_analytic_nodal_measure_zonal_increasing():
    vals = [analytic_nodal_measure(zonal_harmonic(l)) for l in range(1, 65)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_analytic_nodal_measure_rejects_fem_field():
    mesh = icosphere(1)
    f = FemField(mesh, mesh.vertices[:, 2].copy(), 2.0)
    with pytest.raises(TypeError):
        analytic_nodal_measure(f)


# -- ladders --------------------------------------------------------------------------


def test_default_ladders():
    for fam in ("zonal", "highest_weight", "torus_product"):
        lad = build_ladder(fam)
        assert len(lad) == 7
        assert np.all(np.diff(lad.eigenvalues) > 0)
    assert build_ladder("zonal").indices == (8, 11, 16, 23, 32, 45, 64)
    assert build_ladder("torus").indices[0] == (4, 4)
    assert build_ladder("highest-weight").family == "highest_weight"


def test_ladder_requires_increasing_eigenvalues():
    fields = (zonal_harmonic(5), zonal_harmonic(3))
    with pytest.raises(ValueError):
        FamilyLadder("zonal", (5, 3), fields)


def test_geometric_indices():
    assert geometric_indices(8, 64) == (8, 11, 16, 23, 32, 45, 64)
    assert geometric_indices(5, 5) == (5,)
    with pytest.raises(ValueError):
        geometric_indices(9, 4)
