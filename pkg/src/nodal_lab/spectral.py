"""Linear finite-element Laplace-Beltrami eigenpairs on closed triangle meshes."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .eigenfunctions import EigenfunctionField
from .geometry import TriangleMesh

log = logging.getLogger(__name__)

ITERATION_CAP = 500
CLUSTER_GAP = 1e-2


class EigenSolveError(RuntimeError):
    """Shift-invert iteration did not converge within the iteration cap."""

    def __init__(self, message, eigenvalues=(), residuals=()):
        super().__init__(message)
        self.eigenvalues = list(eigenvalues)
        self.residuals = list(residuals)


@dataclass(frozen=True, eq=False)
class SparseSymmetricOperator:
    matrix: sparse.csr_matrix
    warnings: tuple = ()

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    def quadratic_form(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(v @ (self.matrix @ v))

    def triplets(self):
        coo = self.matrix.tocoo()
        return coo.row, coo.col, coo.data


@dataclass(frozen=True, eq=False)
class DiscreteEigenpair:
    eigenvalue: float
    coefficients: np.ndarray
    residual: float
    mesh_hash: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "mesh_hash": self.mesh_hash,
                "eigenvalue": self.eigenvalue,
                "residual": self.residual,
                "coefficients": [float(c) for c in self.coefficients],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "DiscreteEigenpair":
        d = json.loads(text)
        return cls(float(d["eigenvalue"]), np.asarray(d["coefficients"], dtype=float),
                   float(d["residual"]), d.get("mesh_hash", ""))


def _corner_geometry(mesh: TriangleMesh):
    """Cotangent of the angle at each corner, ``(F, 3)``."""
    v = mesh.vertices
    t = mesh.triangles
    cots = np.empty(t.shape)
    for j in range(3):
        o = v[t[:, j]]
        a = v[t[:, (j + 1) % 3]] - o
        b = v[t[:, (j + 2) % 3]] - o
        dot = np.einsum("ij,ij->i", a, b)
        aa = np.einsum("ij,ij->i", a, a)
        bb = np.einsum("ij,ij->i", b, b)
        cross = np.sqrt(np.maximum(aa * bb - dot * dot, 0.0))
        cots[:, j] = dot / cross
    return cots


def _symmetric_from_pairs(n, i, j, w, diag) -> sparse.csr_matrix:
    # Sorted accumulation keeps summation order independent of input ordering.
    rows = np.concatenate([i, j, np.arange(n)])
    cols = np.concatenate([j, i, np.arange(n)])
    vals = np.concatenate([w, w, diag])
    order = np.lexsort((cols, rows))
    m = sparse.coo_matrix((vals[order], (rows[order], cols[order])), shape=(n, n)).tocsr()
    m.sum_duplicates()
    return m


def assemble_stiffness(mesh: TriangleMesh) -> SparseSymmetricOperator:
    """Cotangent stiffness: edge weight ``(cot a + cot b) / 2``, ``v^T K v >= 0``.

    Edges whose total weight is negative are reported in ``warnings`` and
    logged; assembly still succeeds.
    """
    cots = _corner_geometry(mesh)
    # corner j is opposite side (j+1, j+2), i.e. side index (j+1) % 3
    side_w = np.empty_like(cots)
    for j in range(3):
        side_w[:, (j + 1) % 3] = 0.5 * cots[:, j]
    edge_w = np.zeros(len(mesh.edges))
    np.add.at(edge_w, mesh.edge_of_side.ravel(), side_w.ravel())
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    diag = np.zeros(mesh.n_vertices)
    np.add.at(diag, i, edge_w)
    np.add.at(diag, j, edge_w)
    K = _symmetric_from_pairs(mesh.n_vertices, i, j, -edge_w, diag)
    neg = np.flatnonzero(edge_w < 0)
    warnings = tuple((int(i[e]), int(j[e]), float(edge_w[e])) for e in neg)
    if warnings:
        log.warning("%d edges with negative cotangent weight", len(warnings))
    return SparseSymmetricOperator(K, warnings)


def assemble_mass(mesh: TriangleMesh, lumped: bool = True) -> SparseSymmetricOperator:
    areas = mesh.areas
    t = mesh.triangles
    n = mesh.n_vertices
    if lumped:
        d = np.zeros(n)
        np.add.at(d, t.ravel(), np.repeat(areas / 3.0, 3))
        return SparseSymmetricOperator(sparse.diags(d).tocsr())
    off = areas / 12.0
    i = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
    j = np.concatenate([t[:, 1], t[:, 2], t[:, 0]])
    diag = np.zeros(n)
    np.add.at(diag, t.ravel(), np.repeat(areas / 6.0, 3))
    return SparseSymmetricOperator(_symmetric_from_pairs(n, i, j, np.tile(off, 3), diag))


def _residuals(K, M, lams, V) -> np.ndarray:
    R = K @ V - (M @ V) * lams[None, :]
    return np.linalg.norm(R, axis=0) / np.linalg.norm(M @ V, axis=0)


def solve_eigenpairs(K: SparseSymmetricOperator, M: SparseSymmetricOperator, count: int,
                     shift: float = 0.0, max_iter: int = ITERATION_CAP,
                     mesh_hash: str = "") -> list[DiscreteEigenpair]:
    """Smallest ``count`` generalized eigenpairs of ``K v = lam M v``.

    Implicitly restarted Lanczos in shift-invert mode around ``shift``.  The
    shift is nudged below the spectrum so ``K - shift*M`` stays invertible
    when ``shift = 0`` (constants lie in the kernel of ``K``).  Eigenvectors
    are returned M-orthonormal with a deterministic sign (largest-magnitude
    coefficient positive).
    """
    n = K.dimension
    if count < 1 or count > n // 4:
        raise ValueError(f"count must be in [1, {n // 4}] for dimension {n}")
    Km, Mm = K.matrix.tocsc(), M.matrix.tocsc()
    scale = float(Km.diagonal().sum() / Mm.diagonal().sum())
    sigma = shift - 1e-6 * scale
    v0 = np.ones(n) + 0.01 * np.cos(np.arange(n))
    try:
        lams, V = splinalg.eigsh(Km, k=count, M=Mm, sigma=sigma, which="LM", v0=v0,
                                 maxiter=max_iter, tol=0.0)
    except splinalg.ArpackNoConvergence as exc:
        lams, V = exc.eigenvalues, exc.eigenvectors
        res = _residuals(Km, Mm, lams, V) if len(lams) else []
        raise EigenSolveError(
            f"shift-invert iteration did not converge in {max_iter} iterations "
            f"({len(lams)} of {count} pairs converged)", lams, res) from exc
    order = np.argsort(lams, kind="stable")
    lams, V = lams[order], V[:, order]
    V = _m_orthonormalize(V, Mm)
    big = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[big, np.arange(V.shape[1])])[None, :]
    res = _residuals(Km, Mm, lams, V)
    return [DiscreteEigenpair(float(max(l, 0.0)) if abs(l) < 1e-12 * scale else float(l),
                              V[:, i].copy(), float(res[i]), mesh_hash)
            for i, l in enumerate(lams)]


def _m_orthonormalize(V, M):
    # Two passes of modified Gram-Schmidt in the M inner product.
    V = V.copy()
    for _ in range(2):
        for i in range(V.shape[1]):
            for j in range(i):
                V[:, i] -= (V[:, j] @ (M @ V[:, i])) * V[:, j]
            V[:, i] /= math.sqrt(V[:, i] @ (M @ V[:, i]))
    return V


def cluster_eigenvalues(lams, gap: float = CLUSTER_GAP) -> list[list[int]]:
    """Group sorted eigenvalues whose relative spacing is below ``gap``."""
    groups: list[list[int]] = []
    for i, lam in enumerate(lams):
        if groups:
            prev = lams[groups[-1][-1]]
            if abs(lam - prev) <= gap * max(abs(lam), abs(prev), 1e-12) or max(abs(lam), abs(prev)) < 1e-8:
                groups[-1].append(i)
                continue
        groups.append([i])
    return groups


class FemField(EigenfunctionField):
    """Piecewise-linear eigenfunction on a triangle mesh.

    Points are given as ``(triangle ids, barycentric coordinates)``.  The
    coefficients are rescaled so that the consistent-mass norm equals one.
    """

    family = "fem"

    def __init__(self, mesh: TriangleMesh, coefficients, eigenvalue: float, index=(0,),
                 family: str = "fem", normalize: bool = True, scale: float = 1.0):
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (mesh.n_vertices,):
            raise ValueError("one coefficient per mesh vertex is required")
        if normalize:
            Mc = assemble_mass(mesh, lumped=False).matrix
            c = c / math.sqrt(float(c @ (Mc @ c)))
        self.mesh = mesh
        self.domain = mesh
        self.coefficients = c
        self.eigenvalue = float(eigenvalue)
        self.index = tuple(index) if isinstance(index, (tuple, list)) else (index,)
        self.family = family
        self.scale = scale
        self._grads = None

    @property
    def vertex_values(self) -> np.ndarray:
        return self.scale * self.coefficients

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.vertex_values)))

    def _triangle_gradients(self) -> np.ndarray:
        if self._grads is None:
            v, t, c = self.mesh.vertices, self.mesh.triangles, self.coefficients
            e1 = v[t[:, 1]] - v[t[:, 0]]
            e2 = v[t[:, 2]] - v[t[:, 0]]
            g11 = np.einsum("ij,ij->i", e1, e1)
            g12 = np.einsum("ij,ij->i", e1, e2)
            g22 = np.einsum("ij,ij->i", e2, e2)
            det = g11 * g22 - g12 * g12
            d1 = c[t[:, 1]] - c[t[:, 0]]
            d2 = c[t[:, 2]] - c[t[:, 0]]
            # In-plane gradient: G = a e1 + b e2 with G.e1 = d1, G.e2 = d2
            a = (g22 * d1 - g12 * d2) / det
            b = (g11 * d2 - g12 * d1) / det
            self._grads = a[:, None] * e1 + b[:, None] * e2
        return self._grads

    def _check(self, tri, bary):
        tri = np.asarray(tri, dtype=np.int64)
        bary = np.asarray(bary, dtype=float)
        if np.any((tri < 0) | (tri >= self.mesh.n_triangles)):
            raise ValueError("evaluation point outside mesh: bad triangle id")
        if bary.shape[-1] != 3 or np.any(bary < -1e-12) or np.any(np.abs(bary.sum(-1) - 1) > 1e-9):
            raise ValueError("evaluation point outside mesh: barycentric coordinates invalid")
        return tri, bary

    def evaluate_bary(self, tri, bary) -> np.ndarray:
        tri, bary = self._check(tri, bary)
        vals = self.vertex_values[self.mesh.triangles[tri]]
        return np.einsum("...j,...j->...", vals, bary)

    def evaluate(self, points) -> np.ndarray:
        tri, bary = points
        return self.evaluate_bary(tri, bary)

    def gradient(self, points):
        tri, _ = self._check(*points)
        g = self.scale * self._triangle_gradients()[tri]
        return g, np.linalg.norm(g, axis=-1)

    def gradient_norm_sq(self, points) -> np.ndarray:
        tri, _ = self._check(*points)
        return self.gradient_norm_sq_on(tri)

    def gradient_norm_sq_on(self, tri) -> np.ndarray:
        g = self._triangle_gradients()[np.asarray(tri)]
        return self.scale**2 * np.einsum("ij,ij->i", g, g)

    def evaluate_vertex(self, i) -> np.ndarray:
        return self.vertex_values[i]

    def locate(self, point, candidates: int = 8):
        """Find ``(triangle id, barycentric)`` for an embedding-space point."""
        from scipy.spatial import cKDTree

        if not hasattr(self, "_tree"):
            v, t = self.mesh.vertices, self.mesh.triangles
            self._tree = cKDTree(v[t].mean(axis=1))
        x = np.asarray(point, dtype=float)
        _, ids = self._tree.query(x, k=min(candidates, self.mesh.n_triangles))
        v, t = self.mesh.vertices, self.mesh.triangles
        for tid in np.atleast_1d(ids):
            a, b, c = v[t[tid]]
            e1, e2, r = b - a, c - a, x - a
            G = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
            s, u = np.linalg.solve(G, [r @ e1, r @ e2])
            bary = np.array([1 - s - u, s, u])
            proj = a + s * e1 + u * e2
            h = math.sqrt(max(G[0, 0], G[1, 1]))
            if bary.min() >= -1e-9 and np.linalg.norm(x - proj) <= 0.5 * h:
                return int(tid), np.clip(bary, 0.0, 1.0) / np.clip(bary, 0.0, 1.0).sum()
        raise ValueError("evaluation point outside mesh")

    def grid_values(self, u, v):
        raise TypeError("mesh fields have no chart grid")

    def scaled(self, c: float) -> "FemField":
        f = FemField(self.mesh, self.coefficients, self.eigenvalue, self.index, self.family,
                     normalize=False, scale=self.scale * float(c))
        f._grads = self._grads
        return f


def fem_field(mesh: TriangleMesh, pair: DiscreteEigenpair, index=0, tolerance: float = 1e-8) -> FemField:
    if not pair.residual <= tolerance:
        raise ValueError(f"eigenpair residual {pair.residual:.2e} exceeds {tolerance:.0e}")
    return FemField(mesh, pair.coefficients, pair.eigenvalue, index=index)


def project_onto_span(v: np.ndarray, basis: np.ndarray, M) -> np.ndarray:
    """M-orthogonal projection of ``v`` onto the span of M-orthonormal columns."""
    coeff = basis.T @ (M @ v)
    return basis @ coeff
