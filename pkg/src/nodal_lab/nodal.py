"""Nodal set extraction and line integrals over it.

The zero set of a field is traced with marching triangles over a sampling
triangulation: a half-cell-offset tensor grid on a chart (plus two pole fans
on the sphere) or the mesh itself for finite-element fields.  Grid cells whose
four corners alternate in sign are handled as a star of four segments meeting
at the bilinear saddle point, which keeps crossing nodal lines exact.
"""

from __future__ import annotations

import csv
import dataclasses
import enum
import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .eigenfunctions import EigenfunctionField
from .geometry import TWO_PI, ChartDescriptor, ChartKind, refine_mesh, refine_vertex_values

MIN_RESOLUTION = 8
MIN_SEGMENT_LENGTH = 1e-13
_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)


class AuxSelector(str, enum.Enum):
    ONE = "One"
    AUXILIARY = "Auxiliary"

    @classmethod
    def parse(cls, value) -> "AuxSelector":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("-", "").replace("_", "")
        for member in cls:
            if key in (member.value.lower(), member.name.lower().replace("_", "")):
                return member
        if key == "aux":
            return cls.AUXILIARY
        raise ValueError(f"unknown auxiliary function selector {value!r}")


class FieldMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class NodalCurveSet:
    """Polyline approximation of a nodal set.

    ``points`` are chart coordinates ``(P, 2)`` for chart fields and
    embedding coordinates for mesh fields.  ``segments`` index into
    ``points``.  For mesh fields every segment also records its sampling
    triangle and the barycentric coordinates of both endpoints.
    """

    field_tag: str
    domain: object
    resolution: int
    points: np.ndarray
    segments: np.ndarray
    segment_lengths: np.ndarray
    sampler: EigenfunctionField | None = None
    segment_triangles: np.ndarray | None = None
    segment_bary: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def total_length(self) -> float:
        return float(math.fsum(self.segment_lengths))

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @cached_property
    def polylines(self) -> list[np.ndarray]:
        """Segments chained into point-id sequences.

        Open chains start at points of degree other than two (crossings, pole
        fans); the rest are closed loops.  Ties go to the lowest segment index.
        """
        return _chain(self.segments, len(self.points))

    def segment_endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        return self.points[self.segments[:, 0]], self.points[self.segments[:, 1]]

    @classmethod
    def from_polylines(cls, chart: ChartDescriptor, polylines, field_tag: str = "", resolution: int = 0):
        """Curve set from explicit chart-coordinate polylines (no sampling field)."""
        pts, segs, off = [], [], 0
        for line in polylines:
            line = np.asarray(line, dtype=float).reshape(-1, 2)
            pts.append(line)
            ids = np.arange(off, off + len(line))
            segs.append(np.column_stack([ids[:-1], ids[1:]]))
            off += len(line)
        points = np.concatenate(pts) if pts else np.zeros((0, 2))
        segments = np.concatenate(segs).astype(np.int64) if segs else np.zeros((0, 2), dtype=np.int64)
        lengths = chart.segment_length(points[segments[:, 0]], points[segments[:, 1]]) if len(segments) \
            else np.zeros(0)
        return cls(field_tag, chart, resolution, points, segments, np.asarray(lengths, dtype=float))


def _chain(segments: np.ndarray, n_points: int) -> list[np.ndarray]:
    if len(segments) == 0:
        return []
    incident: list[list[int]] = [[] for _ in range(n_points)]
    for s, (a, b) in enumerate(segments.tolist()):
        incident[a].append(s)
        incident[b].append(s)
    used = np.zeros(len(segments), dtype=bool)
    seg = segments.tolist()
    lines = []

    def walk(start_point: int, first_seg: int) -> list[int]:
        path = [start_point]
        p, s = start_point, first_seg
        while s is not None:
            used[s] = True
            a, b = seg[s]
            p = b if a == p else a
            path.append(p)
            nxt = None
            if len(incident[p]) == 2:
                for t in incident[p]:
                    if not used[t]:
                        nxt = t
                        break
            s = nxt
        return path

    for p in range(n_points):
        if incident[p] and len(incident[p]) != 2:
            for s in incident[p]:
                if not used[s]:
                    lines.append(np.array(walk(p, s)))
    for s in range(len(seg)):
        if not used[s]:
            lines.append(np.array(walk(seg[s][0], s)))
    return lines


# ---------------------------------------------------------------------------
# Root polishing along sampling edges
# ---------------------------------------------------------------------------


def _polish(field: EigenfunctionField, p: np.ndarray, q: np.ndarray, fp: np.ndarray, fq: np.ndarray,
            max_iter: int = 60) -> np.ndarray:
    """Locate zeros on chart segments ``p -> q`` by bracketed root finding.

    Illinois false-position steps keep the sign bracket; a bisection step is
    taken whenever the interpolated point leaves it.  Returns the edge
    parameter ``t`` in ``[0, 1]``.
    """
    n = len(p)
    a, b = np.zeros(n), np.ones(n)
    fa, fb = fp.astype(float).copy(), fq.astype(float).copy()
    pos_a = fa >= 0.0
    t = np.where(fa == 0.0, 0.0, fa / (fa - fb))
    done = fa == 0.0
    tiny = 1e-15 * (np.abs(fa) + np.abs(fb))
    last = np.zeros(n, dtype=np.int8)
    for _ in range(max_iter):
        idx = np.flatnonzero(~done)
        if idx.size == 0:
            break
        ti = t[idx]
        ft = field.evaluate(p[idx] + ti[:, None] * (q[idx] - p[idx]))
        tol = tiny[idx]
        keep_b = (ft >= 0.0) == pos_a[idx]  # ti replaces a
        na = np.where(keep_b, ti, a[idx])
        nb = np.where(keep_b, b[idx], ti)
        nfa = np.where(keep_b, ft, fa[idx])
        nfb = np.where(keep_b, fb[idx], ft)
        side = np.where(keep_b, 1, -1).astype(np.int8)
        repeat = side == last[idx]
        nfb = np.where(repeat & keep_b, 0.5 * nfb, nfb)
        nfa = np.where(repeat & ~keep_b, 0.5 * nfa, nfa)
        last[idx] = side
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = (na * nfb - nb * nfa) / (nfb - nfa)
        outside = ~np.isfinite(cand) | (cand <= na) | (cand >= nb)
        cand = np.where(outside, 0.5 * (na + nb), cand)
        a[idx], b[idx], fa[idx], fb[idx] = na, nb, nfa, nfb
        converged = (np.abs(ft) <= tol) | (nb - na <= 4e-16) | (np.abs(cand - ti) <= 1e-16)
        t[idx] = np.where(np.abs(ft) <= tol, ti, cand)
        done[idx] = converged
    return np.clip(t, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Chart extraction
# ---------------------------------------------------------------------------


def _grid_axes(chart: ChartDescriptor, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    if chart.kind is ChartKind.SPHERE_POLAR:
        n_u, n_v = resolution, 2 * resolution
        u = (np.arange(n_u) + 0.5) * math.pi / n_u
    else:
        n_u = n_v = resolution
        u = (np.arange(n_u) + 0.5) * TWO_PI / n_u
    v = (np.arange(n_v) + 0.5) * TWO_PI / n_v
    return u, v


class _EdgeSet:
    """Accumulates sampling edges with sign changes and their crossings."""

    def __init__(self):
        self.p, self.q, self.fp, self.fq = [], [], [], []
        self.count = 0

    def add(self, p, q, fp, fq) -> np.ndarray:
        """Register edges; returns crossing ids (or -1 where no sign change).

        ``p`` and ``q`` are ``(u, v)`` coordinate pairs broadcastable to the
        shape of ``fp``; points are only built for crossing edges.
        """
        change = (fp >= 0.0) != (fq >= 0.0)
        ids = np.full(change.shape, -1, dtype=np.int64)
        n = int(np.count_nonzero(change))
        ids[change] = self.count + np.arange(n)
        self.count += n
        self.p.append(_points_at(p, change))
        self.q.append(_points_at(q, change))
        self.fp.append(fp[change])
        self.fq.append(fq[change])
        return ids

    def crossings(self, field) -> np.ndarray:
        if self.count == 0:
            return np.empty((0, 2))
        p, q = np.concatenate(self.p), np.concatenate(self.q)
        fp, fq = np.concatenate(self.fp), np.concatenate(self.fq)
        t = _polish(field, p, q, fp, fq)
        return p + t[:, None] * (q - p)


def _points_at(uv, mask) -> np.ndarray:
    u, v = (np.broadcast_to(c, mask.shape) for c in uv)
    return np.stack([u[mask], v[mask]], axis=-1)


def _triangle_segments(e01, e12, e20) -> np.ndarray:
    """Pick the two crossing ids of each triangle (from its three side ids)."""
    sides = np.stack([e01, e12, e20], axis=-1).reshape(-1, 3)
    has = sides >= 0
    count = has.sum(axis=1)
    sel = sides[count == 2]
    mask = sel >= 0
    return sel[mask].reshape(-1, 2)


def _extract_chart(field: EigenfunctionField, resolution: int) -> NodalCurveSet:
    chart: ChartDescriptor = field.domain
    sphere = chart.kind is ChartKind.SPHERE_POLAR
    u, v = _grid_axes(chart, resolution)
    F = field.grid_values(u, v)
    n_u, n_v = F.shape
    pos = F >= 0.0
    edges = _EdgeSet()
    jn = (np.arange(n_v) + 1) % n_v
    v_next = np.where(jn == 0, v[0] + TWO_PI, v[jn])  # unwrapped neighbour coordinate

    # Row-direction (v) edges: (i, j) -> (i, j+1)
    U, V = u[:, None], v[None, :]
    e_v = edges.add((U, V), (U, v_next[None, :]), F, F[:, jn])
    # Column-direction (u) edges: (i, j) -> (i+1, j)
    if sphere:
        rows = np.arange(n_u - 1)
        u_next = u[1:]
    else:
        rows = np.arange(n_u)
        u_next = np.append(u[1:], u[0] + TWO_PI)
    i_next = (rows + 1) % n_u
    Ur, Un = u[rows][:, None], u_next[:, None]
    F_next = F[i_next]
    e_u = edges.add((Ur, V), (Un, V), F[rows], F_next)
    # Diagonals: (i, j) -> (i+1, j+1)
    e_d = edges.add((Ur, V), (Un, v_next[None, :]), F[rows], F_next[:, jn])

    # Cell corners a=(i,j), b=(i+1,j), c=(i+1,j+1), d=(i,j+1)
    pa, pb, pc, pd = pos[rows], pos[i_next], pos[i_next][:, jn], pos[rows][:, jn]
    saddle = (pa == pc) & (pb == pd) & (pa != pb)
    e_ab = e_u
    e_bc = e_v[i_next]
    e_dc = e_u[:, jn]
    e_ad = e_v[rows]
    e_ac = e_d
    # only cells with a crossing on some side can carry segments
    keep = ~saddle & ((e_ab >= 0) | (e_bc >= 0) | (e_dc >= 0) | (e_ad >= 0))
    segs = [
        _triangle_segments(e_ab[keep], e_bc[keep], e_ac[keep]),
        _triangle_segments(e_ac[keep], e_dc[keep], e_ad[keep]),
    ]

    # Pole fans (registered before saddle centres so that centre ids follow all crossings)
    if sphere:
        for pole_theta, row in ((0.0, 0), (math.pi, n_u - 1)):
            f_pole = float(field.evaluate(np.array([pole_theta, 0.0])))
            e_pole = edges.add((pole_theta, v), (u[row], v), np.full(n_v, f_pole), F[row])
            segs.append(_triangle_segments(e_pole, e_v[row], e_pole[jn]))

    # Saddle stars
    si, sj = np.nonzero(saddle)
    centres = np.empty((0, 2))
    if si.size:
        fa = F[rows][si, sj]
        fb = F[i_next][si, sj]
        fc = F[i_next][:, jn][si, sj]
        fd = F[rows][:, jn][si, sj]
        den = fa - fb - fd + fc
        s_u = np.clip((fa - fd) / den, 0.0, 1.0)  # along u (a -> b)
        s_v = np.clip((fa - fb) / den, 0.0, 1.0)  # along v (a -> d)
        u0, v0 = u[rows][si], v[sj]
        centres = np.stack([u0 + s_u * (u_next[si] - u0), v0 + s_v * (v_next[sj] - v0)], axis=1)
        cid = edges.count + np.arange(si.size)
        for sid in (e_ab[si, sj], e_bc[si, sj], e_dc[si, sj], e_ad[si, sj]):
            segs.append(np.stack([sid, cid], axis=1))

    points = np.concatenate([edges.crossings(field), centres])
    segments = np.concatenate([s for s in segs if s.size] or [np.empty((0, 2), np.int64)])
    p, q = points[segments[:, 0]], points[segments[:, 1]]
    lengths = chart.segment_length(p, q)
    ok = lengths > MIN_SEGMENT_LENGTH
    return NodalCurveSet(
        field_tag=field.tag,
        domain=chart,
        resolution=resolution,
        points=points,
        segments=segments[ok],
        segment_lengths=lengths[ok],
        sampler=field,
        metadata={"saddle_cells": int(si.size)},
    )


# ---------------------------------------------------------------------------
# Mesh extraction
# ---------------------------------------------------------------------------


def _extract_mesh(field, resolution: int) -> NodalCurveSet:
    from .spectral import FemField

    refinements = int(math.log2(resolution // MIN_RESOLUTION))
    sampler: FemField = field
    for _ in range(refinements):
        mesh = refine_mesh(sampler.mesh)
        sampler = FemField(mesh, refine_vertex_values(sampler.mesh, sampler.coefficients),
                           sampler.eigenvalue, index=field.index, family=field.family,
                           normalize=False, scale=sampler.scale)
    mesh = sampler.mesh
    vals = sampler.vertex_values
    pos = vals >= 0.0
    e = mesh.edges
    change = pos[e[:, 0]] != pos[e[:, 1]]
    cross_id = np.full(len(e), -1, dtype=np.int64)
    cross_id[change] = np.arange(int(change.sum()))
    f0, f1 = vals[e[change, 0]], vals[e[change, 1]]
    t_edge = f0 / (f0 - f1)
    x0, x1 = mesh.vertices[e[change, 0]], mesh.vertices[e[change, 1]]
    points = x0 + t_edge[:, None] * (x1 - x0)

    side_ids = cross_id[mesh.edge_of_side]
    count = (side_ids >= 0).sum(axis=1)
    tri = np.flatnonzero(count == 2)
    sides = side_ids[tri]
    tri_v = mesh.triangles[tri]
    segments = np.empty((len(tri), 2), dtype=np.int64)
    bary = np.zeros((len(tri), 2, 3))
    edge_ids = mesh.edge_of_side[tri]
    rows = np.arange(len(tri))
    slot = np.zeros(len(tri), dtype=np.int64)
    for j in range(3):
        has = sides[:, j] >= 0
        r = rows[has]
        s = slot[has]
        segments[r, s] = sides[has, j]
        ed = edge_ids[has, j]
        t = t_edge[cross_id[ed]]
        # crossing parameter is measured from the lower vertex id of the edge
        start = tri_v[has, j]
        forward = start == e[ed, 0]
        t_side = np.where(forward, t, 1.0 - t)
        bary[r, s, j] = 1.0 - t_side
        bary[r, s, (j + 1) % 3] = t_side
        slot[has] += 1
    p, q = points[segments[:, 0]], points[segments[:, 1]]
    lengths = np.linalg.norm(q - p, axis=1)
    ok = lengths > MIN_SEGMENT_LENGTH
    return NodalCurveSet(
        field_tag=field.tag,
        domain=field.mesh,
        resolution=resolution,
        points=points,
        segments=segments[ok],
        segment_lengths=lengths[ok],
        sampler=sampler,
        segment_triangles=tri[ok],
        segment_bary=bary[ok],
        metadata={"refinements": refinements},
    )


def extract_nodal_curves(field: EigenfunctionField, resolution: int = 512) -> NodalCurveSet:
    """Trace the zero set of ``field``.

    For chart fields ``resolution`` is the grid density per coordinate (the
    sphere uses ``resolution`` latitude rows and twice as many longitude
    columns).  For mesh fields it selects ``log2(resolution / 8)`` uniform
    refinements of the interpolant before extraction.
    """
    resolution = int(resolution)
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    if field.scale != 1.0:
        # Z(c e) = Z(e); tracing the unscaled field makes the curves bitwise scale-invariant
        curves = extract_nodal_curves(field.with_scale(1.0), resolution)
        chart = isinstance(field.domain, ChartDescriptor)
        return dataclasses.replace(curves, field_tag=field.tag, sampler=field if chart else curves.sampler)
    if isinstance(field.domain, ChartDescriptor):
        return _extract_chart(field, resolution)
    return _extract_mesh(field, resolution)


def nodal_length(curves: NodalCurveSet) -> float:
    return curves.total_length


# ---------------------------------------------------------------------------
# Integrals over the nodal set
# ---------------------------------------------------------------------------


def _check_pair(field: EigenfunctionField, curves: NodalCurveSet):
    if field.tag != curves.field_tag:
        raise FieldMismatchError(f"curves were extracted from {curves.field_tag}, not {field.tag}")


def _segment_gauss_values(field, curves: NodalCurveSet, selector: AuxSelector):
    """``|grad e|`` and ``f`` at 4 Gauss points per segment, plus weights."""
    n = curves.n_segments
    w = 0.5 * curves.segment_lengths[:, None] * _GL4_W[None, :]
    s = 0.5 * (1.0 + _GL4_X)
    if curves.segment_triangles is None:
        p, q = curves.segment_endpoints()
        pts = p[:, None, :] + s[None, :, None] * curves.domain.delta(p, q)[:, None, :]
        pts = pts.reshape(-1, 2)
        gsq = field.gradient_norm_sq(pts).reshape(n, 4)
        e = field.evaluate(pts).reshape(n, 4) if selector is AuxSelector.AUXILIARY else None
    else:
        sampler = curves.sampler.scaled(field.scale / curves.sampler.scale)
        b0, b1 = curves.segment_bary[:, 0], curves.segment_bary[:, 1]
        bary = b0[:, None, :] + s[None, :, None] * (b1 - b0)[:, None, :]
        tri = np.repeat(curves.segment_triangles, 4)
        gsq = sampler.gradient_norm_sq_on(curves.segment_triangles)[:, None] * np.ones((1, 4))
        e = sampler.evaluate_bary(tri, bary.reshape(-1, 3)).reshape(n, 4) \
            if selector is AuxSelector.AUXILIARY else None
    if selector is AuxSelector.ONE:
        f = 1.0
    else:
        f = np.sqrt(1.0 + field.eigenvalue * e * e + gsq)
    return gsq, f, w


def nodal_line_integral(field: EigenfunctionField, curves: NodalCurveSet, f_selector="One") -> float:
    """``int_Z |grad_g e| f dS`` (without the factor 2 of the identity)."""
    _check_pair(field, curves)
    sel = AuxSelector.parse(f_selector)
    if curves.n_segments == 0:
        return 0.0
    gsq, f, w = _segment_gauss_values(field, curves, sel)
    return float(np.sum(w * np.sqrt(gsq) * f))


def nodal_energy(field: EigenfunctionField, curves: NodalCurveSet) -> float:
    """``int_Z |grad_g e|^2 dS``."""
    _check_pair(field, curves)
    if curves.n_segments == 0:
        return 0.0
    gsq, _, w = _segment_gauss_values(field, curves, AuxSelector.ONE)
    return float(np.sum(w * gsq))


def curves_to_csv(field: EigenfunctionField, curves: NodalCurveSet) -> str:
    """CSV with columns ``polyline_id, point_index, coord1, coord2, grad_norm``.

    Chart curves report chart coordinates.  Mesh curves report spherical
    angles ``(theta, phi)`` for 3D embeddings and flat ``(x, y)`` for the
    Clifford torus.
    """
    _check_pair(field, curves)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["polyline_id", "point_index", "coord1", "coord2", "grad_norm"])
    if curves.segment_triangles is None:
        coords = curves.points
        gn = np.sqrt(field.gradient_norm_sq(coords)) if len(coords) else np.empty(0)
    else:
        coords = _mesh_point_coords(curves.points)
        gn = np.zeros(len(curves.points))
        tri_g = np.sqrt(curves.sampler.gradient_norm_sq_on(curves.segment_triangles)) * abs(
            field.scale / curves.sampler.scale)
        # a point takes the gradient of the first segment touching it
        for col in (1, 0):
            gn[curves.segments[::-1, col]] = tri_g[::-1]
    for pid, line in enumerate(curves.polylines):
        for k, p in enumerate(line):
            w.writerow([pid, k, repr(float(coords[p, 0])), repr(float(coords[p, 1])), repr(float(gn[p]))])
    return buf.getvalue()


def _mesh_point_coords(points: np.ndarray) -> np.ndarray:
    if points.shape[1] >= 4:
        x = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
        y = np.mod(np.arctan2(points[:, 3], points[:, 2]), TWO_PI)
        return np.stack([x, y], axis=1)
    r = np.linalg.norm(points, axis=1)
    theta = np.arccos(np.clip(points[:, 2] / r, -1.0, 1.0))
    phi = np.mod(np.arctan2(points[:, 1], points[:, 0]), TWO_PI)
    return np.stack([theta, phi], axis=1)
