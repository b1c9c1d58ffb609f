import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nodal_lab.geometry import TriangleMesh, icosphere, load_mesh, torus_grid_mesh
from nodal_lab.spectral import (DiscreteEigenpair, EigenSolveError, FemField, assemble_mass, assemble_stiffness,
                                cluster_eigenvalues, fem_field, project_onto_span, solve_eigenpairs)

REGULAR_TETRA = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
TETRA_FACES = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])


def pillow(p0, p1, p2):
    """A triangle and its reverse: the smallest closed surface with a flat face."""
    return TriangleMesh(np.array([p0, p1, p2], dtype=float), np.array([[0, 1, 2], [0, 2, 1]]))


@pytest.fixture(scope="module")
def sphere5():
    mesh = icosphere(5)
    K, M = assemble_stiffness(mesh), assemble_mass(mesh)
    return mesh, K, M, solve_eigenpairs(K, M, 16, mesh_hash=mesh.digest())


# -- assembly -----------------------------------------------------------------------


def test_stiffness_kills_constants_and_is_symmetric():
    mesh = icosphere(3)
    K = assemble_stiffness(mesh)
    assert np.max(np.abs(K.matrix @ np.ones(mesh.n_vertices))) <= 1e-10
    assert (K.matrix - K.matrix.T).nnz == 0
    assert K.quadratic_form(np.ones(mesh.n_vertices)) == pytest.approx(0.0, abs=1e-10)
    assert K.warnings == ()


def test_regular_tetrahedron_edge_weight():
    K = assemble_stiffness(TriangleMesh(REGULAR_TETRA, TETRA_FACES))
    off = K.matrix.toarray()[~np.eye(4, dtype=bool)]
    assert np.allclose(off, -1 / math.sqrt(3), atol=1e-14)


def test_quadratic_form_is_weighted_edge_sum():
    mesh = icosphere(2)
    K = assemble_stiffness(mesh)
    rng = np.random.default_rng(1)
    v = rng.normal(size=mesh.n_vertices)
    i, j = mesh.edges.T
    w = -np.asarray(K.matrix[i, j]).ravel()
    assert K.quadratic_form(v) == pytest.approx(float(np.sum(w * (v[i] - v[j]) ** 2)), rel=1e-12)


def test_obtuse_pairs_are_reported():
    h = 0.05
    v = np.array([[2, 0, h], [-2, 0, h], [0, 1, -h], [0, -1, -h]], dtype=float)
    mesh = TriangleMesh(v, TETRA_FACES)
    K = assemble_stiffness(mesh)
    assert len(K.warnings) >= 1
    assert all(w < 0 for _, _, w in K.warnings)


def test_lumped_mass_trace_is_area():
    mesh = icosphere(4)
    M = assemble_mass(mesh, lumped=True)
    assert abs(M.matrix.diagonal().sum() - mesh.total_area) <= 1e-12 * mesh.total_area


def test_consistent_mass_row_sums_on_right_triangle():
    mesh = pillow([0, 0, 0], [1, 0, 0], [0, 1, 0])
    M = assemble_mass(mesh, lumped=False).matrix.toarray()
    # two copies of the unit right triangle (area 1/2)
    assert np.allclose(M.sum(axis=1) / 2, 0.5 / 3, atol=1e-15)
    assert np.allclose(np.diag(M) / 2, 0.5 / 6)


@pytest.mark.parametrize("lumped", [True, False])
def test_constant_vector_mass_is_area(lumped):
    mesh = icosphere(3)
    M = assemble_mass(mesh, lumped=lumped)
    one = np.ones(mesh.n_vertices)
    assert M.quadratic_form(one) == pytest.approx(mesh.total_area, rel=1e-12)


def test_consistent_mass_positive_definite():
    mesh = icosphere(1)
    eig = np.linalg.eigvalsh(assemble_mass(mesh, lumped=False).matrix.toarray())
    assert eig.min() > 0


# -- eigenpairs -------------------------------------------------------------------------


def test_sphere_spectrum_clusters(sphere5):
    _, _, _, pairs = sphere5
    lams = np.array([p.eigenvalue for p in pairs])
    assert abs(lams[0]) <= 1e-8
    assert np.all(np.diff(lams) >= 0)
    clusters = cluster_eigenvalues(lams)
    assert [len(c) for c in clusters] == [1, 3, 5, 7]
    for c, target in zip(clusters[1:], (2.0, 6.0, 12.0)):
        assert np.all(np.abs(lams[c] - target) <= 1e-2 * target)


def test_eigenpairs_orthonormal_with_small_residuals(sphere5):
    mesh, K, M, pairs = sphere5
    V = np.stack([p.coefficients for p in pairs], axis=1)
    G = V.T @ (M.matrix @ V)
    assert np.max(np.abs(G - np.eye(len(pairs)))) <= 1e-8
    KV = V.T @ (K.matrix @ V)
    assert np.max(np.abs(KV - np.diag(np.diag(KV)))) <= 1e-8 * np.max(np.diag(KV))
    assert max(p.residual for p in pairs) <= 1e-8
    assert all(abs(p.coefficients @ (M.matrix @ p.coefficients) - 1) <= 1e-10 for p in pairs)
    assert all(p.mesh_hash == mesh.digest() for p in pairs)


def test_solver_is_deterministic(sphere5):
    mesh, K, M, pairs = sphere5
    again = solve_eigenpairs(K, M, 16, mesh_hash=mesh.digest())
    assert [p.to_json() for p in again] == [p.to_json() for p in pairs]


def test_sphere_spectrum_converges_second_order():
    errs = []
    for s in (4, 5, 6):
        mesh = icosphere(s)
        lams = np.array([p.eigenvalue for p in solve_eigenpairs(assemble_stiffness(mesh), assemble_mass(mesh), 16)])
        exact = np.array([2.0] * 3 + [6.0] * 5 + [12.0] * 7)
        errs.append(np.abs(lams[1:] - exact) / exact)
    for a, b in zip(errs, errs[1:]):
        assert np.all(np.log2(a / b) >= 1.8)


def test_torus_grid_first_eigenvalues():
    mesh = torus_grid_mesh(48)
    pairs = solve_eigenpairs(assemble_stiffness(mesh), assemble_mass(mesh), 9)
    lams = np.array([p.eigenvalue for p in pairs])
    assert abs(lams[0]) <= 1e-8
    assert np.all(np.abs(lams[1:5] - 1.0) <= 0.02)
    assert np.all(np.abs(lams[5:9] - 2.0) <= 0.04)


def test_count_guard():
    mesh = icosphere(0)
    with pytest.raises(ValueError):
        solve_eigenpairs(assemble_stiffness(mesh), assemble_mass(mesh), 4)


def test_iteration_cap_reports_failure():
    mesh = icosphere(4)
    with pytest.raises(EigenSolveError) as info:
        solve_eigenpairs(assemble_stiffness(mesh), assemble_mass(mesh), 40, max_iter=1)
    assert len(info.value.residuals) == len(info.value.eigenvalues)


def test_eigenpair_json_round_trip(sphere5):
    p = sphere5[3][4]
    q = DiscreteEigenpair.from_json(p.to_json())
    assert q.eigenvalue == p.eigenvalue and q.residual == p.residual and q.mesh_hash == p.mesh_hash
    assert np.array_equal(q.coefficients, p.coefficients)


def test_cluster_gap():
    assert cluster_eigenvalues([0.0, 1.0, 1.005, 2.0]) == [[0], [1, 2], [3]]


# -- FEM fields --------------------------------------------------------------------------


def test_fem_field_normalized_with_consistent_mass(sphere5):
    mesh, _, _, pairs = sphere5
    f = fem_field(mesh, pairs[5], index=5)
    Mc = assemble_mass(mesh, lumped=False).matrix
    assert abs(f.coefficients @ (Mc @ f.coefficients) - 1.0) <= 1e-10


def test_fem_field_vertex_evaluation():
    mesh = icosphere(2)
    c = mesh.vertices[:, 0] + 0.5
    f = FemField(mesh, c, 2.0, normalize=False)
    tri = np.array([3, 3, 3])
    corners = mesh.triangles[3]
    assert np.allclose(f.evaluate((tri, np.eye(3))), c[corners])
    assert f.evaluate_vertex(7) == c[7]


def test_fem_gradient_exact_for_affine_function():
    mesh = pillow([0.2, 0.1, 0], [1.3, 0.0, 0], [0.4, 0.9, 0])
    c = 2 * mesh.vertices[:, 0] + 3 * mesh.vertices[:, 1] + 1
    f = FemField(mesh, c, 1.0, normalize=False)
    g, n = f.gradient((np.array([0, 1]), np.full((2, 3), 1 / 3)))
    assert np.allclose(g, [[2, 3, 0], [2, 3, 0]], atol=1e-10)
    assert np.allclose(n, math.sqrt(13), atol=1e-10)


def test_fem_evaluation_outside_mesh_rejected():
    mesh = icosphere(1)
    f = FemField(mesh, mesh.vertices[:, 2].copy(), 2.0)
    with pytest.raises(ValueError):
        f.evaluate((np.array([mesh.n_triangles]), np.array([[1.0, 0, 0]])))
    with pytest.raises(ValueError):
        f.evaluate((np.array([0]), np.array([[1.5, -0.5, 0.0]])))
    with pytest.raises(ValueError):
        f.locate([5.0, 5.0, 5.0])


def test_fem_locate_round_trip():
    mesh = icosphere(3)
    f = FemField(mesh, mesh.vertices[:, 2].copy(), 2.0, normalize=False)
    a, b, c = mesh.vertices[mesh.triangles[11]]
    tri, bary = f.locate(0.2 * a + 0.3 * b + 0.5 * c)
    assert tri == 11 and np.allclose(bary, [0.2, 0.3, 0.5])


def test_fem_field_rejects_unconverged_pair():
    mesh = icosphere(1)
    pair = DiscreteEigenpair(2.0, mesh.vertices[:, 2].copy(), 1e-3, mesh.digest())
    with pytest.raises(ValueError):
        fem_field(mesh, pair)


def test_projection_onto_cluster_span(sphere5):
    mesh, _, M, pairs = sphere5
    basis = np.stack([pairs[i].coefficients for i in (1, 2, 3)], axis=1)
    # the linear functions are exactly P1 and lie close to the l = 1 span
    for axis in range(3):
        v = mesh.vertices[:, axis]
        p = project_onto_span(v, basis, M.matrix)
        assert np.sqrt((v - p) @ (M.matrix @ (v - p))) <= 1e-2 * np.sqrt(v @ (M.matrix @ v))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stiffness_form_nonnegative(seed):
    mesh = icosphere(2)
    K = assemble_stiffness(mesh)
    v = np.random.default_rng(seed).normal(size=mesh.n_vertices)
    assert K.quadratic_form(v) >= 0


def test_load_mesh_then_solve():
    text = "OFF\n" + f"{len(REGULAR_TETRA)} 4 6\n" + "\n".join(" ".join(map(str, p)) for p in REGULAR_TETRA) + \
        "\n" + "\n".join("3 " + " ".join(map(str, t)) for t in TETRA_FACES) + "\n"
    mesh = load_mesh(text)
    K = assemble_stiffness(mesh)
    lams = np.linalg.eigvals(np.linalg.solve(assemble_mass(mesh).matrix.toarray(), K.matrix.toarray()))
    assert np.min(np.abs(lams)) <= 1e-12
