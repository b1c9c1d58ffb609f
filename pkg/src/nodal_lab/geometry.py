"""Domains, charts, triangle meshes and quadrature rules.

Two analytic charts are supported (the polar chart of the unit sphere and the
flat 2-torus ``[0, 2pi)^2``) together with closed triangle meshes.  Every
integral in the package is a weighted sum over a :class:`QuadratureRule` built
here.
"""

from __future__ import annotations

import enum
import functools
import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

TWO_PI = 2.0 * math.pi
MIN_TRIANGLE_AREA = 1e-12
MAX_SUBDIVISIONS = 8


class MeshError(ValueError):
    """Base class for mesh construction and parsing failures."""


class MalformedHeaderError(MeshError):
    pass


class NonTriangularFaceError(MeshError):
    pass


class IndexOutOfRangeError(MeshError):
    pass


class DegenerateTriangleError(MeshError):
    pass


class TopologyError(MeshError):
    """Raised when a mesh is not a closed, consistently oriented surface."""


class ChartKind(str, enum.Enum):
    SPHERE_POLAR = "SpherePolar"
    TORUS_FLAT = "TorusFlat"


@dataclass(frozen=True)
class ChartDescriptor:
    """A coordinate chart carrying a diagonal metric.

    Points are arrays with a trailing axis of length 2: ``(theta, phi)`` on the
    sphere and ``(x, y)`` on the torus.
    """

    kind: ChartKind

    @property
    def ranges(self) -> tuple[tuple[float, float], tuple[float, float]]:
        if self.kind is ChartKind.SPHERE_POLAR:
            return (0.0, math.pi), (0.0, TWO_PI)
        return (0.0, TWO_PI), (0.0, TWO_PI)

    @property
    def area(self) -> float:
        return 4.0 * math.pi if self.kind is ChartKind.SPHERE_POLAR else TWO_PI**2

    def inverse_metric(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Diagonal coefficients ``(g^11, g^22)`` of the inverse metric.

        The off-diagonal coefficient vanishes for both charts.
        """
        points = np.asarray(points, dtype=float)
        if self.kind is ChartKind.SPHERE_POLAR:
            s = np.sin(points[..., 0])
            return np.ones_like(s), 1.0 / (s * s)
        ones = np.ones(points.shape[:-1])
        return ones, ones

    def area_element(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if self.kind is ChartKind.SPHERE_POLAR:
            return np.sin(points[..., 0])
        return np.ones(points.shape[:-1])

    def gradient_norm_sq(self, points, d1, d2) -> np.ndarray:
        """``|grad u|_g^2 = g^jk d_j u d_k u`` from chart partials ``d1, d2``."""
        g11, g22 = self.inverse_metric(points)
        return g11 * d1 * d1 + g22 * d2 * d2

    def delta(self, p, q) -> np.ndarray:
        """``q - p`` with periodic coordinates taken to their nearest image."""
        d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
        d = d.copy()
        periodic = (1,) if self.kind is ChartKind.SPHERE_POLAR else (0, 1)
        for ax in periodic:
            d[..., ax] = np.mod(d[..., ax] + math.pi, TWO_PI) - math.pi
        return d

    def segment_length(self, p, q) -> np.ndarray:
        """Metric length of chart segments ``p -> q`` with midpoint evaluation."""
        p = np.asarray(p, dtype=float)
        d = self.delta(p, q)
        if self.kind is ChartKind.SPHERE_POLAR:
            s = np.sin(p[..., 0] + 0.5 * d[..., 0])
            return np.sqrt(d[..., 0] ** 2 + (s * d[..., 1]) ** 2)
        return np.hypot(d[..., 0], d[..., 1])


SPHERE_CHART = ChartDescriptor(ChartKind.SPHERE_POLAR)
TORUS_CHART = ChartDescriptor(ChartKind.TORUS_FLAT)


# ---------------------------------------------------------------------------
# Triangle meshes
# ---------------------------------------------------------------------------


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Areas of triangles embedded in any dimension >= 2."""
    a = vertices[triangles[:, 1]] - vertices[triangles[:, 0]]
    b = vertices[triangles[:, 2]] - vertices[triangles[:, 0]]
    aa = np.einsum("ij,ij->i", a, a)
    bb = np.einsum("ij,ij->i", b, b)
    ab = np.einsum("ij,ij->i", a, b)
    return 0.5 * np.sqrt(np.maximum(aa * bb - ab * ab, 0.0))


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Closed triangulated surface.

    ``vertices`` has shape ``(V, d)`` with ``d >= 3`` (the flat torus is
    embedded in R^4 as a Clifford torus); ``triangles`` has shape ``(F, 3)``.
    Construction validates area, index range, closedness and orientation.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    projected_to_unit_sphere: bool = False
    _edges: np.ndarray = field(init=False, repr=False)
    _edge_of_side: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] < 3:
            raise MeshError(f"vertices must have shape (V, d>=3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise NonTriangularFaceError(f"triangles must have shape (F, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            bad = int(t[(t < 0) | (t >= len(v))][0])
            raise IndexOutOfRangeError(f"vertex index {bad} outside [0, {len(v)})")
        areas = triangle_areas(v, t)
        small = np.flatnonzero(areas <= MIN_TRIANGLE_AREA)
        if small.size:
            raise DegenerateTriangleError(
                f"triangle {int(small[0])} has area {areas[small[0]]:.3e} <= {MIN_TRIANGLE_AREA}"
            )
        edges, edge_of_side = _edge_table(t)
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "_edges", edges)
        object.__setattr__(self, "_edge_of_side", edge_of_side)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges ``(E, 2)``, sorted lexicographically."""
        return self._edges

    @property
    def edge_of_side(self) -> np.ndarray:
        """``(F, 3)`` edge ids; side ``j`` joins corners ``j`` and ``j+1``."""
        return self._edge_of_side

    @property
    def areas(self) -> np.ndarray:
        return triangle_areas(self.vertices, self.triangles)

    @property
    def total_area(self) -> float:
        return float(math.fsum(self.areas))

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self._edges) + self.n_triangles

    def digest(self) -> str:
        """Stable content hash used to tag exported records."""
        h = hashlib.sha256()
        h.update(np.asarray(self.vertices.shape, dtype=np.int64).tobytes())
        h.update(self.vertices.tobytes())
        h.update(self.triangles.tobytes())
        return h.hexdigest()[:16]


def _edge_table(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sides = np.stack([t, np.roll(t, -1, axis=1)], axis=-1).reshape(-1, 2)
    if sides.size == 0:
        return np.empty((0, 2), np.int64), np.empty((0, 3), np.int64)
    if np.any(sides[:, 0] == sides[:, 1]):
        raise DegenerateTriangleError("triangle with repeated vertex index")
    undirected = np.sort(sides, axis=1)
    edges, inverse, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts != 2):
        bad = edges[np.flatnonzero(counts != 2)[0]]
        raise TopologyError(
            f"edge ({bad[0]}, {bad[1]}) is shared by {counts[counts != 2][0]} triangles, expected 2"
        )
    # Consistent orientation: each directed side appears exactly once.
    directed = np.unique(sides, axis=0)
    if len(directed) != len(sides):
        raise TopologyError("inconsistent triangle orientation across a shared edge")
    return edges, inverse.reshape(-1, 3)


_ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)


def _icosahedron_vertices() -> np.ndarray:
    p = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def icosphere(subdivisions: int) -> TriangleMesh:
    """Unit-sphere mesh with ``10 * 4**subdivisions + 2`` vertices."""
    if not 0 <= subdivisions <= MAX_SUBDIVISIONS:
        raise ValueError(f"subdivisions must be in [0, {MAX_SUBDIVISIONS}], got {subdivisions}")
    mesh = TriangleMesh(_icosahedron_vertices(), _ICOSAHEDRON_FACES, projected_to_unit_sphere=True)
    for _ in range(subdivisions):
        mesh = refine_mesh(mesh)
    return mesh


def refine_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Split every triangle into four at its edge midpoints."""
    vertices, triangles = _midpoint_split(mesh)
    if mesh.projected_to_unit_sphere:
        vertices = vertices / np.linalg.norm(vertices, axis=1, keepdims=True)
    return TriangleMesh(vertices, triangles, mesh.projected_to_unit_sphere)


def _midpoint_split(mesh: TriangleMesh) -> tuple[np.ndarray, np.ndarray]:
    nv = mesh.n_vertices
    e = mesh.edges
    mid = 0.5 * (mesh.vertices[e[:, 0]] + mesh.vertices[e[:, 1]])
    vertices = np.vstack([mesh.vertices, mid])
    t = mesh.triangles
    m = mesh.edge_of_side + nv  # m[:, j] sits between corners j and j+1
    triangles = np.concatenate(
        [
            np.stack([t[:, 0], m[:, 0], m[:, 2]], axis=1),
            np.stack([t[:, 1], m[:, 1], m[:, 0]], axis=1),
            np.stack([t[:, 2], m[:, 2], m[:, 1]], axis=1),
            m,
        ]
    )
    return vertices, triangles


def refine_vertex_values(mesh: TriangleMesh, values: np.ndarray) -> np.ndarray:
    """Linear interpolation of vertex data onto the vertices of ``refine_mesh(mesh)``."""
    e = mesh.edges
    return np.concatenate([values, 0.5 * (values[e[:, 0]] + values[e[:, 1]])])


def torus_grid_mesh(n_x: int, n_y: int | None = None) -> TriangleMesh:
    """Periodic grid triangulation of the flat torus ``[0, 2pi)^2``.

    Vertices are placed on the Clifford torus in R^4, which is isometric to the
    flat torus, so edge chords approximate flat lengths to second order.
    """
    n_y = n_x if n_y is None else n_y
    if n_x < 3 or n_y < 3:
        raise ValueError("torus grid needs at least 3 cells per direction")
    x = TWO_PI * np.arange(n_x) / n_x
    y = TWO_PI * np.arange(n_y) / n_y
    X, Y = np.meshgrid(x, y, indexing="ij")
    X, Y = X.ravel(), Y.ravel()
    vertices = np.stack([np.cos(X), np.sin(X), np.cos(Y), np.sin(Y)], axis=1)
    i, j = np.meshgrid(np.arange(n_x), np.arange(n_y), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a = i * n_y + j
    b = ((i + 1) % n_x) * n_y + j
    c = ((i + 1) % n_x) * n_y + (j + 1) % n_y
    d = i * n_y + (j + 1) % n_y
    triangles = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return TriangleMesh(vertices, triangles)


def torus_grid_coordinates(mesh: TriangleMesh) -> np.ndarray:
    """Recover flat ``(x, y)`` coordinates from a Clifford-torus embedding."""
    v = mesh.vertices
    x = np.mod(np.arctan2(v[:, 1], v[:, 0]), TWO_PI)
    y = np.mod(np.arctan2(v[:, 3], v[:, 2]), TWO_PI)
    return np.stack([x, y], axis=1)


def load_mesh(data: bytes | str) -> TriangleMesh:
    """Parse an ASCII OFF mesh and validate it.

    Comment lines starting with ``#`` and blank lines are ignored.
    """
    text = data.decode("ascii") if isinstance(data, (bytes, bytearray)) else data
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    if not lines or not lines[0].startswith("OFF"):
        raise MalformedHeaderError("missing 'OFF' header")
    head = lines[0][3:].split()
    body = lines[1:]
    if not head:
        if not body:
            raise MalformedHeaderError("missing counts line")
        head, body = body[0].split(), body[1:]
    try:
        n_v, n_f = int(head[0]), int(head[1])
    except (IndexError, ValueError):
        raise MalformedHeaderError(f"bad counts line: {' '.join(head)!r}") from None
    if n_v < 0 or n_f < 0 or len(body) < n_v + n_f:
        raise MalformedHeaderError(
            f"header declares {n_v} vertices and {n_f} faces but only {len(body)} data lines follow"
        )
    try:
        vertices = np.array([[float(s) for s in body[i].split()[:3]] for i in range(n_v)])
    except ValueError as exc:
        raise MalformedHeaderError(f"bad vertex line: {exc}") from None
    if n_v and vertices.shape != (n_v, 3):
        raise MalformedHeaderError("vertex lines must carry 3 coordinates")
    triangles = np.empty((n_f, 3), dtype=np.int64)
    for k in range(n_f):
        tok = body[n_v + k].split()
        count = int(tok[0])
        if count != 3:
            raise NonTriangularFaceError(f"face {k} has {count} vertices; only triangles are supported")
        idx = [int(s) for s in tok[1:4]]
        if len(idx) != 3:
            raise MalformedHeaderError(f"face {k} lists fewer than 3 indices")
        for i in idx:
            if not 0 <= i < n_v:
                raise IndexOutOfRangeError(f"face {k} references vertex {i}; file has {n_v} vertices")
        triangles[k] = idx
    return TriangleMesh(vertices.reshape(n_v, 3), triangles)


def dump_off(mesh: TriangleMesh) -> str:
    out = ["OFF", f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.edges)}"]
    out += [" ".join(repr(float(c)) for c in p[:3]) for p in mesh.vertices]
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes with positive weights that carry the area element.

    For chart rules ``nodes`` has shape ``(N, 2)`` in chart coordinates. For
    mesh rules ``triangle_ids`` has shape ``(N,)`` and ``nodes`` holds the
    barycentric coordinates ``(N, 3)``.
    """

    domain: object
    nodes: np.ndarray
    weights: np.ndarray
    triangle_ids: np.ndarray | None = None
    shape: tuple[int, ...] = ()
    axes: tuple | None = None  # tensor-grid chart rules: (u nodes, v nodes, u weights, v weights)

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise ValueError("quadrature weights must be positive")

    @property
    def total_weight(self) -> float:
        return float(math.fsum(self.weights))

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, np.asarray(values, dtype=float).reshape(-1)))


class TensorQuadratureRule(QuadratureRule):
    """Chart rule on a tensor grid; flat nodes and weights are built on first use."""

    def __init__(self, domain, u, v, wu, wv):
        u, v, wu, wv = (np.asarray(a, dtype=float) for a in (u, v, wu, wv))
        if np.any(wu <= 0) or np.any(wv <= 0):
            raise ValueError("quadrature weights must be positive")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "triangle_ids", None)
        object.__setattr__(self, "shape", (len(u), len(v)))
        object.__setattr__(self, "axes", (u, v, wu, wv))

    def __getattr__(self, name):
        # only reached for the lazily built flat arrays
        if name not in ("nodes", "weights"):
            raise AttributeError(name)
        u, v, wu, wv = self.axes
        U, V = np.meshgrid(u, v, indexing="ij")
        object.__setattr__(self, "nodes", np.stack([U.ravel(), V.ravel()], axis=1))
        object.__setattr__(self, "weights", np.multiply.outer(wu, wv).ravel())
        return self.__dict__[name]

    @property
    def total_weight(self) -> float:
        return float(math.fsum(self.axes[2])) * float(math.fsum(self.axes[3]))


@functools.lru_cache(maxsize=16)
def _gauss_legendre(n: int):
    x, w = special.roots_legendre(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def build_sphere_quadrature(n_theta: int, n_phi: int) -> QuadratureRule:
    """Gauss-Legendre in ``cos(theta)`` tensored with uniform ``phi`` nodes."""
    if n_theta < 2 or n_phi < 4:
        raise ValueError(f"need n_theta >= 2 and n_phi >= 4, got ({n_theta}, {n_phi})")
    x, wx = _gauss_legendre(n_theta)
    theta = np.arccos(x[::-1])
    phi = TWO_PI * np.arange(n_phi) / n_phi
    return TensorQuadratureRule(SPHERE_CHART, theta, phi, wx[::-1], np.full(n_phi, TWO_PI / n_phi))


def build_torus_quadrature(n_x: int, n_y: int) -> QuadratureRule:
    """Tensor trapezoid rule on the flat torus (spectral for periodic data)."""
    if n_x < 4 or n_y < 4:
        raise ValueError(f"need n_x, n_y >= 4, got ({n_x}, {n_y})")
    x = TWO_PI * np.arange(n_x) / n_x
    y = TWO_PI * np.arange(n_y) / n_y
    return TensorQuadratureRule(TORUS_CHART, x, y, np.full(n_x, TWO_PI / n_x), np.full(n_y, TWO_PI / n_y))


# Symmetric 6-point rule on the reference triangle, exact for degree 4.
_D4_A, _D4_B = 0.445948490915965, 0.091576213509771
_D4_WA, _D4_WB = 0.223381589678011, 0.109951743655322
_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
    4: (
        np.array(
            [
                [1 - 2 * _D4_A, _D4_A, _D4_A], [_D4_A, 1 - 2 * _D4_A, _D4_A], [_D4_A, _D4_A, 1 - 2 * _D4_A],
                [1 - 2 * _D4_B, _D4_B, _D4_B], [_D4_B, 1 - 2 * _D4_B, _D4_B], [_D4_B, _D4_B, 1 - 2 * _D4_B],
            ]
        ),
        np.array([_D4_WA] * 3 + [_D4_WB] * 3),
    ),
}


def build_mesh_quadrature(mesh: TriangleMesh, degree: int = 2) -> QuadratureRule:
    """Per-triangle symmetric rule exact for polynomials of the given degree (1, 2 or 4)."""
    if degree not in _TRI_RULES:
        raise ValueError(f"degree must be one of {sorted(_TRI_RULES)}")
    bary, w = _TRI_RULES[degree]
    w = w / w.sum()
    areas = mesh.areas
    n = len(bary)
    tri = np.repeat(np.arange(mesh.n_triangles), n)
    nodes = np.tile(bary, (mesh.n_triangles, 1))
    weights = (areas[:, None] * w[None, :]).ravel()
    return QuadratureRule(mesh, nodes, weights, triangle_ids=tri, shape=(mesh.n_triangles, n))
