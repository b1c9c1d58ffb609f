import csv
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodal_lab.eigenfunctions import (analytic_nodal_measure, highest_weight_harmonic, make_field,
                                      torus_product_mode, zonal_harmonic)
from nodal_lab.geometry import SPHERE_CHART, icosphere
from nodal_lab.nodal import (AuxSelector, FieldMismatchError, NodalCurveSet, curves_to_csv, extract_nodal_curves,
                             nodal_energy, nodal_length, nodal_line_integral)
from nodal_lab.spectral import FemField


@pytest.fixture(scope="module")
def zonal1():
    f = zonal_harmonic(1)
    return f, extract_nodal_curves(f, 512)


@pytest.mark.parametrize("field, exact", [
    (zonal_harmonic(1), 2 * math.pi),
    (highest_weight_harmonic(2), 4 * math.pi),
    (torus_product_mode(3, 4), 28 * math.pi),
])
def test_lengths_at_512(field, exact):
    assert abs(extract_nodal_curves(field, 512).total_length - exact) <= 1e-3 * exact


def test_zonal_l1_is_one_closed_curve(zonal1):
    f, curves = zonal1
    (line,) = curves.polylines
    assert line[0] == line[-1]
    assert np.allclose(curves.points[:, 0], math.pi / 2, atol=1e-12)


def test_nodal_length_helper_and_sum(zonal1):
    _, curves = zonal1
    assert nodal_length(curves) == curves.total_length
    assert abs(curves.total_length - float(np.sum(curves.segment_lengths))) <= 1e-12 * curves.total_length
    assert np.all(curves.segment_lengths > 0)


def test_empty_curve_set_has_zero_length():
    assert nodal_length(NodalCurveSet.from_polylines(SPHERE_CHART, [])) == 0.0


def test_meridian_half_circle_length():
    t = np.linspace(0.0, math.pi, 400)
    curves = NodalCurveSet.from_polylines(SPHERE_CHART, [np.column_stack([t, np.full_like(t, 0.7)])])
    assert abs(curves.total_length - math.pi) <= 1e-4


def test_equator_polyline_wraps_seam():
    p = np.linspace(0.0, 2 * math.pi, 65) + 0.01
    curves = NodalCurveSet.from_polylines(SPHERE_CHART, [np.column_stack([np.full_like(p, math.pi / 2),
                                                                          p % (2 * math.pi)])])
    # 64 chords of the unit equator
    assert curves.total_length == pytest.approx(2 * math.pi, rel=1e-12)


def test_zonal_l1_line_integral_and_energy(zonal1):
    f, curves = zonal1
    g = math.sqrt(3 / (4 * math.pi))
    assert nodal_line_integral(f, curves, "One") == pytest.approx(2 * math.pi * g, rel=1e-10)
    assert nodal_energy(f, curves) == pytest.approx(1.5, rel=1e-10)


def test_line_integral_doubles_with_field():
    f = highest_weight_harmonic(6)
    curves = extract_nodal_curves(f, 256)
    g = f.scaled(2.0)
    curves2 = extract_nodal_curves(g, 256)
    a = nodal_line_integral(f, curves, AuxSelector.ONE)
    b = nodal_line_integral(g, curves2, AuxSelector.ONE)
    assert abs(b - 2 * a) <= 1e-12 * abs(b)


@pytest.mark.parametrize("field", [zonal_harmonic(7), highest_weight_harmonic(9), torus_product_mode(5, 12)])
def test_identity_with_f_one(field):
    curves = extract_nodal_curves(field, 1024)
    from nodal_lab.geometry import build_sphere_quadrature, build_torus_quadrature
    from nodal_lab.integrals import volume_integral

    rule = build_sphere_quadrature(1024, 2048) if field.family != "torus_product" else \
        build_torus_quadrature(1024, 1024)
    lhs = field.eigenvalue * volume_integral(field, rule, "AbsE")
    rhs = 2 * nodal_line_integral(field, curves, "One")
    assert abs(lhs - rhs) <= 1e-3 * abs(lhs)


def test_resolution_below_eight_rejected():
    with pytest.raises(ValueError):
        extract_nodal_curves(zonal_harmonic(3), 7)


def test_mismatched_curves_rejected(zonal1):
    _, curves = zonal1
    with pytest.raises(FieldMismatchError):
        nodal_line_integral(zonal_harmonic(2), curves, "One")


@pytest.mark.parametrize("field", [zonal_harmonic(12), highest_weight_harmonic(11), torus_product_mode(4, 7)])
def test_stored_points_are_polished_zeros(field):
    curves = extract_nodal_curves(field, 256)
    assert np.max(np.abs(field.evaluate(curves.points))) <= 1e-6 * field.sup_norm


@pytest.mark.parametrize("field", [zonal_harmonic(9), highest_weight_harmonic(5), torus_product_mode(3, 5)])
def test_sign_invariance(field):
    a = extract_nodal_curves(field, 256).total_length
    b = extract_nodal_curves(field.scaled(-1.0), 256).total_length
    assert abs(a - b) <= 1e-12 * a


@settings(max_examples=15, deadline=None)
@given(st.sampled_from([zonal_harmonic(6), highest_weight_harmonic(4), torus_product_mode(2, 3)]),
       st.floats(1e-3, 1e3))
def test_positive_scale_gives_identical_curves(field, c):
    a = extract_nodal_curves(field, 64)
    b = extract_nodal_curves(field.scaled(c), 64)
    assert np.array_equal(a.points, b.points)
    assert np.array_equal(a.segments, b.segments)


def test_torus_crossings_have_degree_four():
    curves = extract_nodal_curves(torus_product_mode(1, 1), 64)
    deg = np.bincount(curves.segments.ravel(), minlength=len(curves.points))
    # (0,0), (0,pi), (pi,0), (pi,pi)
    assert int(np.sum(deg == 4)) == 4
    assert curves.total_length == pytest.approx(8 * math.pi, rel=1e-12)


def test_zonal_l20_doubling_is_converged():
    f = zonal_harmonic(20)
    a = extract_nodal_curves(f, 512).total_length
    b = extract_nodal_curves(f, 1024).total_length
    assert abs(a - b) <= 1e-4 * b


@pytest.mark.parametrize("field", [highest_weight_harmonic(8), highest_weight_harmonic(32),
                                   torus_product_mode(3, 4), torus_product_mode(5, 12)])
def test_refinement_differences_shrink(field):
    L = [extract_nodal_curves(field, r).total_length for r in (256, 512, 1024)]
    d1, d2 = abs(L[1] - L[0]), abs(L[2] - L[1])
    assert d2 <= 0.5 * d1


def test_zonal_refinement_at_rounding_floor():
    # zonal circles are found exactly at every resolution; successive differences sit at rounding level
    f = zonal_harmonic(20)
    L = [extract_nodal_curves(f, r).total_length for r in (256, 512, 1024)]
    assert max(abs(L[1] - L[0]), abs(L[2] - L[1])) <= 1e-12 * L[0]


def test_oracle_small_indices_at_1024():
    for f in (zonal_harmonic(2), zonal_harmonic(17), highest_weight_harmonic(3), torus_product_mode(7, 2)):
        exact = analytic_nodal_measure(f)
        assert abs(extract_nodal_curves(f, 1024).total_length - exact) <= 1e-3 * exact


def test_auxiliary_line_integral_exceeds_plain():
    f = zonal_harmonic(5)
    curves = extract_nodal_curves(f, 256)
    plain = nodal_line_integral(f, curves, "one")
    aux = nodal_line_integral(f, curves, "aux")
    # f = sqrt(1 + |grad e|^2) on Z, so the weighted integral is strictly larger
    assert aux > plain


def test_curves_csv_columns():
    f = torus_product_mode(1, 2)
    curves = extract_nodal_curves(f, 32)
    rows = list(csv.DictReader(io.StringIO(curves_to_csv(f, curves))))
    assert list(rows[0]) == ["polyline_id", "point_index", "coord1", "coord2", "grad_norm"]
    assert len({r["polyline_id"] for r in rows}) == len(curves.polylines)
    p = np.array([[float(rows[0]["coord1"]), float(rows[0]["coord2"])]])
    assert float(rows[0]["grad_norm"]) == pytest.approx(float(f.gradient(p)[1][0]), rel=1e-12)


def test_fem_field_extraction_on_mesh():
    mesh = icosphere(4)
    f = FemField(mesh, mesh.vertices[:, 2].copy(), 2.0, index=(1,), family="fem")
    curves = extract_nodal_curves(f, 8)
    # inscribed polygon of the equator
    assert 0.99 * 2 * math.pi < curves.total_length < 2 * math.pi
    assert np.max(np.abs(f.evaluate((curves.segment_triangles, curves.segment_bary[:, 0])))) <= 1e-12
    finer = extract_nodal_curves(f, 32)
    assert abs(finer.total_length - curves.total_length) <= 1e-3 * curves.total_length
