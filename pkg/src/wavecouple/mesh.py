"""Tetrahedral volume meshes, closed boundary triangulations and trace maps.

The volume mesh carries P1 degrees of freedom at its vertices.  The boundary
surface reuses the volume's boundary vertices so that the trace of a P1 volume
function is exactly a P1 boundary function; :class:`TraceMap` records the
index correspondence.
"""

from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError, MeshIntegrityError

# local faces of a tet, listed opposite to vertex 0, 1, 2, 3
_TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])

AREA_RTOL = 1e-12
NORMAL_TOL = 1e-12
QUALITY_FLAG = 1e-6


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _triangle_normals(vertices, triangles):
    p = vertices[triangles]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area2 = np.linalg.norm(cr, axis=1)
    return cr, area2


def _edge_check(triangles):
    """Return an error message if the triangle set is not a closed, consistently
    oriented 2-manifold, else ``None``."""
    directed = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    undirected = np.sort(directed, axis=1)
    _, counts = np.unique(undirected, axis=0, return_counts=True)
    if np.any(counts != 2):
        bad = int(np.sum(counts != 2))
        return f"{bad} edges are not shared by exactly two triangles"
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts != 1):
        return "inconsistent orientation: a directed edge is traversed twice"
    return None


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed, outward-oriented triangulation of a boundary surface.

    Attributes
    ----------
    vertices : (nv, 3) float array
    triangles : (nt, 3) int array, counter-clockwise seen from outside
    normals : (nt, 3) float array of outward unit normals
    """

    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray = None

    def __post_init__(self):
        verts = _frozen(self.vertices, float)
        tris = _frozen(self.triangles, np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshIntegrityError("vertices must have shape (nv, 3)")
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise MeshIntegrityError("triangles must have shape (nt, 3)")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise MeshIntegrityError("triangle index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)

        msg = _edge_check(tris)
        if msg:
            raise MeshIntegrityError(msg)
        cr, area2 = _triangle_normals(verts, tris)
        mean = area2.mean()
        if np.any(area2 < AREA_RTOL * mean):
            raise MeshIntegrityError("triangle with vanishing area")
        normals = cr / area2[:, None]
        if self.normals is not None:
            given = np.asarray(self.normals, dtype=float)
            if given.shape != normals.shape:
                raise MeshIntegrityError("normals must have shape (nt, 3)")
            if np.any(np.abs(np.linalg.norm(given, axis=1) - 1.0) > NORMAL_TOL):
                raise MeshIntegrityError("normals must be unit vectors")
            if np.any(np.einsum("ij,ij->i", given, normals) < 1.0 - 1e-9):
                raise MeshIntegrityError("normals disagree with triangle orientation")
            normals = given
        object.__setattr__(self, "normals", _frozen(normals, float))
        # enclosed signed volume is positive iff the orientation is outward
        p = verts[tris]
        vol = np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0
        if vol <= 0:
            raise MeshIntegrityError("normals point into the enclosed volume")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @functools.cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * _triangle_normals(self.vertices, self.triangles)[1]

    @functools.cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @functools.cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def enclosed_volume(self) -> float:
        p = self.vertices[self.triangles]
        return float(
            np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum() / 6.0
        )

    def distance_to(self, points) -> np.ndarray:
        """Exact Euclidean distance from each point to the surface."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.array([_point_surface_distance(x, self) for x in points])


def _point_triangle_distance(x, a, b, c):
    # Ericson, "Real-Time Collision Detection", closest point on triangle
    ab, ac, ap = b - a, c - a, x - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return np.linalg.norm(ap)
    bp = x - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return np.linalg.norm(bp)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        v = d1 / (d1 - d3)
        return np.linalg.norm(x - (a + v * ab))
    cp = x - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return np.linalg.norm(cp)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return np.linalg.norm(x - (a + w * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return np.linalg.norm(x - (b + w * (c - b)))
    denom = 1.0 / (va + vb + vc)
    v, w = vb * denom, vc * denom
    return np.linalg.norm(x - (a + ab * v + ac * w))


def _point_surface_distance(x, surf):
    p = surf.vertices[surf.triangles]
    # prune with centroid distances before the exact per-triangle test
    dc = np.linalg.norm(surf.centroids - x, axis=1) - surf.diameters
    order = np.argsort(dc)
    best = np.inf
    for t in order:
        if dc[t] > best:
            break
        best = min(best, _point_triangle_distance(x, *p[t]))
    return best


@dataclass(frozen=True)
class TraceMap:
    """Index maps from boundary entities to volume entities.

    ``vertex_trace[b]`` is the volume vertex of boundary vertex ``b``;
    ``face_trace[t]`` is ``(tet, local_face)`` for boundary triangle ``t``.
    """

    vertex_trace: np.ndarray
    face_trace: np.ndarray

    def __post_init__(self):
        vt = _frozen(self.vertex_trace, np.int64)
        if len(np.unique(vt)) != len(vt):
            raise MeshIntegrityError("vertex trace is not injective")
        object.__setattr__(self, "vertex_trace", vt)
        object.__setattr__(self, "face_trace", _frozen(self.face_trace, np.int64))


@dataclass(frozen=True)
class VolumeMesh:
    """Conforming tetrahedral mesh with positively oriented tets."""

    vertices: np.ndarray
    tets: np.ndarray

    def __post_init__(self):
        verts = _frozen(self.vertices, float)
        tets = _frozen(self.tets, np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3:
            raise MeshIntegrityError("vertices must have shape (nv, 3)")
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise MeshIntegrityError("tets must have shape (nt, 4)")
        if tets.size and (tets.min() < 0 or tets.max() >= len(verts)):
            raise MeshIntegrityError("tet index out of range")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "tets", tets)
        vol = self.signed_volumes
        if np.any(vol <= 0):
            bad = int(np.flatnonzero(vol <= 0)[0])
            raise MeshIntegrityError(f"tet {bad} has nonpositive signed volume")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @functools.cached_property
    def signed_volumes(self) -> np.ndarray:
        p = self.vertices[self.tets]
        e = p[:, 1:] - p[:, :1]
        return np.einsum("ij,ij->i", e[:, 0], np.cross(e[:, 1], e[:, 2])) / 6.0

    @functools.cached_property
    def boundary_faces(self):
        """Outward-oriented boundary faces ``(faces, tet, local_face)``.

        Faces are given as volume vertex indices.
        """
        nt = self.n_tets
        faces = self.tets[:, _TET_FACES].reshape(-1, 3)
        key = np.sort(faces, axis=1)
        _, inverse, counts = np.unique(
            key, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise MeshIntegrityError("non-manifold mesh: a face is shared by >2 tets")
        once = np.flatnonzero(counts[inverse] == 1)
        tet = once // 4
        local = once % 4
        f = faces[once].copy()
        opposite = self.tets[tet, local]
        p = self.vertices
        n = np.cross(p[f[:, 1]] - p[f[:, 0]], p[f[:, 2]] - p[f[:, 0]])
        inward = np.einsum("ij,ij->i", n, p[opposite] - p[f[:, 0]]) > 0
        f[inward] = f[inward][:, [0, 2, 1]]
        assert len(tet) <= 4 * nt
        return f, tet, local


def make_cube_mesh(n: int, side: float, origin=(0.0, 0.0, 0.0)) -> VolumeMesh:
    """Structured mesh of ``[origin, origin+side]^3`` with ``n`` cells per edge.

    Each hexahedron is split into six tets sharing the main diagonal, the
    same way in every cell, which keeps neighbouring faces conforming.
    """
    if int(n) != n or n < 1:
        raise InvalidParameterError(f"n must be a positive integer, got {n!r}")
    if not side > 0:
        raise InvalidParameterError(f"side must be positive, got {side!r}")
    n = int(n)
    g = np.linspace(0.0, side, n + 1)
    z, y, x = np.meshgrid(g, g, g, indexing="ij")
    verts = np.column_stack([x.ravel(), y.ravel(), z.ravel()]) + np.asarray(origin)

    def vid(i, j, k):
        return i + (n + 1) * (j + (n + 1) * k)

    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    unit = np.eye(3, dtype=np.int64)
    tets = []
    for perm in itertools.permutations(range(3)):
        c = np.zeros(3, dtype=np.int64)
        corners = [c.copy()]
        for axis in perm:
            c = c + unit[axis]
            corners.append(c.copy())
        tets.append(
            np.column_stack([vid(i + o[0], j + o[1], k + o[2]) for o in corners])
        )
    tets = np.concatenate(tets)
    p = verts[tets]
    e = p[:, 1:] - p[:, :1]
    neg = np.einsum("ij,ij->i", e[:, 0], np.cross(e[:, 1], e[:, 2])) < 0
    tets[neg] = tets[neg][:, [0, 2, 1, 3]]
    return VolumeMesh(verts, tets)


def make_icosphere(level: int, radius: float = 1.0) -> SurfaceMesh:
    """Icosahedron refined ``level`` times with vertices projected to the sphere."""
    if int(level) != level or level < 0:
        raise InvalidParameterError(f"level must be a nonnegative integer, got {level!r}")
    if not radius > 0:
        raise InvalidParameterError(f"radius must be positive, got {radius!r}")
    t = (1.0 + 5.0**0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(int(level)):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    verts = radius * np.array(verts)
    faces = np.array(faces, dtype=np.int64)
    p = verts[faces]
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    inward = np.einsum("ij,ij->i", n, p.mean(axis=1)) < 0
    faces[inward] = faces[inward][:, [0, 2, 1]]
    return SurfaceMesh(verts, faces)


def extract_boundary(vol: VolumeMesh):
    """Boundary triangulation of ``vol`` and the volume/boundary index maps.

    Raises
    ------
    MeshIntegrityError
        If the boundary is open, non-manifold or inconsistently oriented.
    """
    faces, tet, local = vol.boundary_faces
    if len(faces) == 0:
        raise MeshIntegrityError("mesh has no boundary faces")
    vtrace, tris = np.unique(faces, return_inverse=True)
    tris = tris.reshape(-1, 3)
    surf = SurfaceMesh(vol.vertices[vtrace], tris)
    trace = TraceMap(vtrace, np.column_stack([tet, local]))
    return surf, trace


def mesh_stats(vol: VolumeMesh) -> dict:
    """Edge lengths and the normalized radius-ratio quality of ``vol``.

    Quality is ``3 r_in / r_circ`` which equals 1 for a regular tet; tets
    below ``QUALITY_FLAG`` are listed under ``"flagged"``.
    """
    p = vol.vertices[vol.tets]
    pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    edges = np.sort(
        np.concatenate([vol.tets[:, [a, b]] for a, b in pairs]), axis=1
    )
    edges = np.unique(edges, axis=0)
    lengths = np.linalg.norm(vol.vertices[edges[:, 1]] - vol.vertices[edges[:, 0]], axis=1)

    volume = np.abs(vol.signed_volumes)
    fa = p[:, _TET_FACES]
    face_area = 0.5 * np.linalg.norm(
        np.cross(fa[:, :, 1] - fa[:, :, 0], fa[:, :, 2] - fa[:, :, 0]), axis=2
    ).sum(axis=1)
    r_in = 3.0 * volume / face_area
    # circumcenter c - p0 solves 2 E (c - p0) = |E|^2 rowwise
    e = p[:, 1:] - p[:, :1]
    rhs = 0.5 * np.einsum("tij,tij->ti", e, e)
    with np.errstate(all="ignore"):
        try:
            c = np.linalg.solve(e, rhs[..., None])[..., 0]
            r_circ = np.linalg.norm(c, axis=1)
        except np.linalg.LinAlgError:
            r_circ = np.full(len(e), np.inf)
        quality = np.nan_to_num(3.0 * r_in / r_circ, nan=0.0)
    return {
        "h_max": float(lengths.max()),
        "h_min": float(lengths.min()),
        "quality": float(quality.min()),
        "flagged": np.flatnonzero(quality < QUALITY_FLAG).tolist(),
    }


def load_mesh(path) -> VolumeMesh:
    """Read the plain-text ``wcmesh 1`` format."""
    lines = [
        ln.split("#", 1)[0].strip()
        for ln in Path(path).read_text().splitlines()
    ]
    lines = [ln for ln in lines if ln]
    try:
        if lines[0].split() != ["wcmesh", "1"]:
            raise MeshIntegrityError(f"{path}: missing 'wcmesh 1' header")
        tag, nv = lines[1].split()
        if tag != "vertices":
            raise MeshIntegrityError(f"{path}: expected 'vertices N'")
        nv = int(nv)
        verts = np.array([[float(x) for x in ln.split()] for ln in lines[2 : 2 + nv]])
        tag, nt = lines[2 + nv].split()
        if tag != "tets":
            raise MeshIntegrityError(f"{path}: expected 'tets M'")
        nt = int(nt)
        tets = np.array(
            [[int(x) for x in ln.split()] for ln in lines[3 + nv : 3 + nv + nt]],
            dtype=np.int64,
        )
    except (IndexError, ValueError) as exc:
        raise MeshIntegrityError(f"{path}: malformed mesh file ({exc})") from exc
    if verts.shape != (nv, 3) or tets.shape != (nt, 4):
        raise MeshIntegrityError(f"{path}: wrong number of entries per line")
    vol = VolumeMesh(verts, tets)
    extract_boundary(vol)
    return vol


def save_mesh(vol: VolumeMesh, path) -> None:
    out = ["wcmesh 1", f"vertices {vol.n_vertices}"]
    out += [f"{x!r} {y!r} {z!r}" for x, y, z in vol.vertices.tolist()]
    out.append(f"tets {vol.n_tets}")
    out += [" ".join(map(str, t)) for t in vol.tets.tolist()]
    Path(path).write_text("\n".join(out) + "\n")
