"""Galerkin boundary operators of the Helmholtz equation ``s^2 u - Laplace u = 0``.

Discrete spaces: piecewise constants on triangles (``Phi_h``) and
continuous piecewise linears on vertices (``Psi_h``).  With the kernel
``G(x, y) = exp(-s r) / (4 pi r)`` and exterior normals ``n``::

    V[k, k']  = <b_k, V b_k'>            P0 x P0
    K[k, l]   = <b_k, K lambda_l>        P0 x P1, kernel d/dn_y G
    KT        = K.T                      P1 x P0
    W[l, l']  = <lambda_l, W lambda_l'>  P1 x P1

``W`` uses the integrated-by-parts form

    <W u, v> = int int G (curl u(y) . curl v(x) + s^2 n_x . n_y u(y) v(x))

which only needs weakly singular integrals.  Touching triangle pairs use the
Sauter-Schwab rules from :mod:`wavecouple.quadrature`; pairs closer than
``near_factor`` diameters use ``q_near`` tensor Gauss points, the rest
``q_far``.  Singular and near pairs are integrated once per unordered pair so
the assembled ``V`` and ``W`` are symmetric up to summation round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, ProximityError, SingularityError
from .mesh import SurfaceMesh
from .quadrature import (
    edge_rule,
    identical_rule,
    map_points,
    shape_p1,
    triangle_rule,
    vertex_rule,
)

FOUR_PI = 4.0 * np.pi
MIN_QUAD_ORDER = 2
FAR_CACHE_LIMIT = 20_000_000  # point pairs kept in memory across frequencies
CHUNK_POINT_PAIRS = 1_500_000


@dataclass(frozen=True)
class QuadratureConfig:
    q_sing: int = 4
    q_near: int = 4
    q_far: int = 3
    q_potential: int = 6
    near_factor: float = 1.5

    def __post_init__(self):
        for name in ("q_sing", "q_near", "q_far", "q_potential"):
            q = getattr(self, name)
            if int(q) != q or q < MIN_QUAD_ORDER:
                raise InvalidParameterError(
                    f"{name} must be an integer >= {MIN_QUAD_ORDER}, got {q!r}"
                )
        if self.near_factor < 0:
            raise InvalidParameterError("near_factor must be nonnegative")


@dataclass(frozen=True)
class BoundaryOps:
    s: complex
    V: np.ndarray
    K: np.ndarray
    KT: np.ndarray
    W: np.ndarray


def helmholtz_kernel(s, x, y):
    """``exp(-s |x - y|) / (4 pi |x - y|)``; raises at coincident points."""
    r = np.linalg.norm(np.asarray(x, dtype=float) - np.asarray(y, dtype=float), axis=-1)
    if np.any(r == 0):
        raise SingularityError("kernel evaluated at x == y; use singular quadrature")
    return np.exp(-s * r) / (FOUR_PI * r)


def check_frequency(s):
    s = complex(s)
    if not s.real > 0:
        raise InvalidParameterError(f"frequency must satisfy Re s > 0, got {s}")
    return s


def _surface_gradients(tri_xyz):
    """Tangential gradients of the three barycentric functions ``(nt, 3, 3)``."""
    e1 = tri_xyz[:, 1] - tri_xyz[:, 0]
    e2 = tri_xyz[:, 2] - tri_xyz[:, 0]
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12**2
    grad1 = ((g22 / det)[:, None] * e1 - (g12 / det)[:, None] * e2)
    grad2 = ((g11 / det)[:, None] * e2 - (g12 / det)[:, None] * e1)
    grad0 = -grad1 - grad2
    return np.stack([grad0, grad1, grad2], axis=1)


class _PairBlock:
    """Geometry of a list of unordered triangle pairs ``(i, j)`` with their
    quadrature points, stored in the reordered local vertex numbering."""

    def __init__(self, i, j, perm_i, perm_j, X, Y, w, lam_x, lam_y, ni, nj):
        self.i, self.j = i, j
        self.perm_i, self.perm_j = perm_i, perm_j
        d = X - Y
        r = np.linalg.norm(d, axis=-1)
        self.r = r
        self.g0 = w / (FOUR_PI * r)
        self.hy = self.g0 * np.einsum("pqc,pc->pq", d, nj) / r**2  # (x - y) . n_y
        self.hx = -self.g0 * np.einsum("pqc,pc->pq", d, ni) / r**2  # (y - x) . n_x
        self.lam_x, self.lam_y = lam_x, lam_y

    def __len__(self):
        return len(self.i)

    def sums(self, s, need_v11=True, need_k=True):
        e = np.exp(-s * self.r)
        g = self.g0 * e
        out = {"v": g.sum(axis=1)}
        if need_v11:
            out["v11"] = np.einsum("pq,qk,ql->pkl", g, self.lam_x, self.lam_y, optimize=True)
        if need_k:
            e1 = e * (1.0 + s * self.r)
            out["ky"] = (self.hy * e1) @ self.lam_y
            out["kx"] = (self.hx * e1) @ self.lam_x
        return out


class BoundaryAssembler:
    """Frequency-independent geometry of a surface, reused for every ``s``."""

    def __init__(self, surf: SurfaceMesh, quad: QuadratureConfig = None):
        self.surf = surf
        self.quad = quad or QuadratureConfig()
        q = self.quad
        tri = surf.triangles
        nt = surf.n_triangles
        self.nt, self.nv = nt, surf.n_vertices
        self.tri_xyz = surf.vertices[tri]
        self.area = surf.areas
        self.normals = np.asarray(surf.normals)
        grads = _surface_gradients(self.tri_xyz)
        self.curls = np.cross(self.normals[:, None, :], grads)  # (nt, 3, 3)

        inc = sp.csr_matrix(
            (np.ones(3 * nt), (np.repeat(np.arange(nt), 3), tri.ravel())),
            shape=(nt, self.nv),
        )
        shared = (inc @ inc.T).tocoo()
        touching = np.zeros((nt, nt), dtype=bool)
        touching[shared.row, shared.col] = True
        cdist = np.linalg.norm(
            surf.centroids[:, None, :] - surf.centroids[None, :, :], axis=-1
        )
        diam = surf.diameters
        near = (cdist < q.near_factor * np.maximum(diam[:, None], diam[None, :])) & ~touching
        self.far_mask = ~(touching | near)

        self.blocks = []
        upper = shared.row <= shared.col
        rows, cols, cnt = shared.row[upper], shared.col[upper], shared.data[upper]
        ident = rows == cols
        self.blocks.append(self._singular_block(rows[ident], cols[ident], 3))
        for count in (2, 1):
            sel = (~ident) & (cnt == count)
            self.blocks.append(self._singular_block(rows[sel], cols[sel], count))
        ni, nj = np.nonzero(np.triu(near, 1))
        if len(ni):
            pts, wts = triangle_rule(q.q_near)
            lam = shape_p1(pts)
            nq = len(wts)
            X = map_points(self.tri_xyz[ni], pts)
            Y = map_points(self.tri_xyz[nj], pts)
            X = np.repeat(X, nq, axis=1)
            Y = np.tile(Y, (1, nq, 1))
            w = np.outer(wts, wts).ravel()[None, :] * (4.0 * self.area[ni] * self.area[nj])[:, None]
            ident3 = np.tile(np.arange(3), (len(ni), 1))
            self.blocks.append(
                _PairBlock(
                    ni, nj, ident3, ident3, X, Y, w,
                    np.repeat(lam, nq, axis=0), np.tile(lam, (nq, 1)),
                    self.normals[ni], self.normals[nj],
                )
            )
        self.blocks = [b for b in self.blocks if b is not None]

        pts, wts = triangle_rule(q.q_far)
        self.far_lam = shape_p1(pts)
        self.far_pts = map_points(self.tri_xyz, pts)  # (nt, qf, 3)
        self.far_w = wts[None, :] * (2.0 * self.area)[:, None]
        nq = len(wts)
        self._far_cache = None
        if (nt * nq) ** 2 <= FAR_CACHE_LIMIT:
            self._far_cache = self._far_geometry(np.arange(nt))

        self.scatter = sp.csr_matrix(
            (np.ones(3 * nt), (np.arange(3 * nt), tri.ravel())), shape=(3 * nt, self.nv)
        )

    # ------------------------------------------------------------------ setup
    def _singular_block(self, i, j, count):
        if len(i) == 0:
            return None
        q = self.quad.q_sing
        rule = {3: identical_rule, 2: edge_rule, 1: vertex_rule}[count](q)
        tri = self.surf.triangles
        perm_i = np.empty((len(i), 3), dtype=np.int64)
        perm_j = np.empty((len(i), 3), dtype=np.int64)
        for p, (a, b) in enumerate(zip(i, j)):
            ta, tb = list(tri[a]), list(tri[b])
            if count == 3:
                perm_i[p] = perm_j[p] = (0, 1, 2)
                continue
            common = [v for v in ta if v in tb]
            rest_a = [v for v in ta if v not in common]
            rest_b = [v for v in tb if v not in common]
            oa = common + rest_a
            ob = common + rest_b
            perm_i[p] = [ta.index(v) for v in oa]
            perm_j[p] = [tb.index(v) for v in ob]
        txi = np.take_along_axis(self.tri_xyz[i], perm_i[:, :, None], axis=1)
        txj = np.take_along_axis(self.tri_xyz[j], perm_j[:, :, None], axis=1)
        X = map_points(txi, rule.x)
        Y = map_points(txj, rule.y)
        w = rule.w[None, :] * (4.0 * self.area[i] * self.area[j])[:, None]
        return _PairBlock(
            i, j, perm_i, perm_j, X, Y, w, shape_p1(rule.x), shape_p1(rule.y),
            self.normals[i], self.normals[j],
        )

    def _far_geometry(self, rows):
        """Real factors of the far-pair integrands for triangle ``rows``:
        ``r``, ``w / (4 pi r)``, ``w dn / (4 pi r^3)`` and the latter times ``r``,
        with non-far pairs masked to zero weight."""
        X = self.far_pts[rows]
        d = X[:, :, None, None, :] - self.far_pts[None, None, :, :, :]
        r = np.linalg.norm(d, axis=-1)
        dn = np.einsum("iajbc,jc->iajb", d, self.normals)
        mask = self.far_mask[rows][:, None, :, None]
        r = np.where(mask, r, 1.0)
        ww = self.far_w[rows][:, :, None, None] * self.far_w[None, None, :, :] * mask
        g0 = ww / (FOUR_PI * r)
        h0 = g0 * dn / r**2
        return r, g0, h0, h0 * r

    # ---------------------------------------------------------------- kernels
    def _far_part(self, s, need_v11, need_k):
        nt, nq = self.nt, self.far_w.shape[1]
        V = np.zeros((nt, nt), dtype=complex)
        V11 = np.zeros((nt, 3, nt, 3), dtype=complex) if need_v11 else None
        Kl = np.zeros((nt, nt, 3), dtype=complex) if need_k else None
        lam = self.far_lam
        step = max(1, CHUNK_POINT_PAIRS // (nq * nt * nq))
        for a in range(0, nt, step):
            rows = np.arange(a, min(a + step, nt))
            if self._far_cache is not None:
                r, g0, h0, h1 = (c[rows] for c in self._far_cache)
            else:
                r, g0, h0, h1 = self._far_geometry(rows)
            e = np.exp(-s * r)
            g = g0 * e
            V[rows] = g.sum(axis=(1, 3))
            if need_v11:
                V11[rows] = np.einsum("iajb,ak,bl->ikjl", g, lam, lam, optimize=True)
            if need_k:
                h = e * (h0 + s * h1)
                m = len(rows)
                Kl[rows] = (h.reshape(-1, nq) @ lam).reshape(m, nq, nt, 3).sum(axis=1)
        return V, V11, Kl

    def _pair_matrices(self, s, need_v11=True, need_k=True):
        V, V11, Kl = self._far_part(s, need_v11, need_k)
        for blk in self.blocks:
            out = blk.sums(s, need_v11, need_k)
            i, j = blk.i, blk.j
            off = i != j
            np.add.at(V, (i, j), out["v"])
            np.add.at(V, (j[off], i[off]), out["v"][off])
            pi, pj = blk.perm_i, blk.perm_j
            if need_v11:
                v11 = out["v11"]
                if not off.all():
                    v11 = np.where(off[:, None, None], v11, 0.5 * (v11 + v11.transpose(0, 2, 1)))
                ii = np.broadcast_to(i[:, None, None], v11.shape)
                jj = np.broadcast_to(j[:, None, None], v11.shape)
                kk = np.broadcast_to(pi[:, :, None], v11.shape)
                ll = np.broadcast_to(pj[:, None, :], v11.shape)
                np.add.at(V11, (ii, kk, jj, ll), v11)
                o = off
                np.add.at(V11, (jj[o], ll[o], ii[o], kk[o]), v11[o])
            if need_k:
                ky, kx = out["ky"], out["kx"]
                np.add.at(Kl, (np.broadcast_to(i[:, None], ky.shape), np.broadcast_to(j[:, None], ky.shape), pj), ky)
                o = off
                np.add.at(
                    Kl,
                    (np.broadcast_to(j[o][:, None], kx[o].shape), np.broadcast_to(i[o][:, None], kx[o].shape), pi[o]),
                    kx[o],
                )
        return V, V11, Kl

    # ---------------------------------------------------------------- public
    def single_layer(self, s):
        s = complex(s)
        V, _, _ = self._pair_matrices(s, need_v11=False, need_k=False)
        return V

    def operators(self, s) -> BoundaryOps:
        s = complex(s)
        V, V11, Kl = self._pair_matrices(s)
        nt = self.nt
        L = self.scatter
        K = np.asarray((L.T @ Kl.reshape(nt, 3 * nt).T).T)
        C = self.curls.reshape(3 * nt, 3)
        curl_dot = (C @ C.T).reshape(nt, 3, nt, 3)
        nn = self.normals @ self.normals.T
        loc = curl_dot * V[:, None, :, None] + (s * s) * nn[:, None, :, None] * V11
        loc = loc.reshape(3 * nt, 3 * nt)
        W = np.asarray(L.T @ np.asarray(L.T @ loc.T).T)
        W = 0.5 * (W + W.T)
        return BoundaryOps(s, V, K, K.T.copy(), W)


def assemble_boundary_ops(s, surf: SurfaceMesh, q: QuadratureConfig = None, assembler=None):
    s = check_frequency(s)
    asm = assembler or BoundaryAssembler(surf, q)
    return asm.operators(s)


def potential_matrices(s, points, surf: SurfaceMesh, q: QuadratureConfig = None, check=True):
    """Rows of the single layer (P0 densities) and double layer (P1 densities)
    potentials at off-surface points.

    Returns ``(S, D)`` of shapes ``(npts, |Phi|)`` and ``(npts, |Psi|)``.
    """
    s = complex(s)
    q = q or QuadratureConfig()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if check:
        check_proximity(points, surf)
    pts, wts = triangle_rule(q.q_potential)
    lam = shape_p1(pts)
    Y = map_points(surf.vertices[surf.triangles], pts)  # (nt, q, 3)
    w = wts[None, :] * (2.0 * surf.areas)[:, None]
    d = points[:, None, None, :] - Y[None]  # x - y
    r = np.linalg.norm(d, axis=-1)
    e = np.exp(-s * r)
    g = w[None] * e / (FOUR_PI * r)
    S = g.sum(axis=2)
    dn = np.einsum("ptqc,tc->ptq", d, np.asarray(surf.normals))
    h = w[None] * e * (1.0 + s * r) * dn / (FOUR_PI * r**3)
    loc = np.einsum("ptq,ql->ptl", h, lam).reshape(len(points), -1)
    nt = surf.n_triangles
    L = sp.csr_matrix(
        (np.ones(3 * nt), (np.arange(3 * nt), surf.triangles.ravel())),
        shape=(3 * nt, surf.n_vertices),
    )
    D = np.asarray((L.T @ loc.T).T)
    return S, D


def min_edge_length(surf: SurfaceMesh) -> float:
    p = surf.vertices[surf.triangles]
    e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
    return float(np.linalg.norm(e, axis=2).min())


def check_proximity(points, surf: SurfaceMesh):
    hmin = min_edge_length(surf)
    dist = surf.distance_to(points)
    bad = np.flatnonzero(dist < hmin)
    if bad.size:
        raise ProximityError(
            f"point {int(bad[0])} lies {dist[bad[0]]:.3e} from the surface (< h_min = {hmin:.3e})"
        )
