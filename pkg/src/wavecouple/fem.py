"""P1 finite element matrices of the interior first-order wave system.

Unknowns are nodal values ``u`` (scalar, |U_h| = number of volume vertices)
and ``v`` (vector field stored component-major, ``v[c * nu + a]``).  The
matrices satisfy the semidiscrete system

    M0 u' = -D^T v - C0 phi + M0 f
    M1 v' =  D u   - C1 psi
    B(d/dt) (phi, psi) = (C0^T u, C1^T v)

with P0 boundary densities ``phi`` (one per boundary triangle) and P1
boundary densities ``psi`` (one per boundary vertex).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, ConvergenceError, FactorizationError
from .mesh import SurfaceMesh, TraceMap, VolumeMesh

DIRECT_SOLVER_LIMIT = 60_000
DEGENERATE_VOLUME = 1e-14  # relative to the longest edge cubed


@dataclass(frozen=True)
class FemMatrices:
    M0: sp.csr_matrix
    M1: sp.csr_matrix
    D: sp.csr_matrix
    C0: sp.csr_matrix = None
    C1: sp.csr_matrix = None

    @property
    def n_u(self) -> int:
        return self.M0.shape[0]

    @property
    def n_v(self) -> int:
        return self.M1.shape[0]

    def with_coupling(self, C0, C1) -> "FemMatrices":
        return FemMatrices(self.M0, self.M1, self.D, sp.csr_matrix(C0), sp.csr_matrix(C1))


def tet_gradients(vol: VolumeMesh):
    """Barycentric gradients ``(nt, 4, 3)`` and volumes ``(nt,)``."""
    p = vol.vertices[vol.tets]
    e = p[:, 1:] - p[:, :1]
    volume = vol.signed_volumes
    edges = np.concatenate([e, p[:, 2:] - p[:, 1:2], p[:, 3:] - p[:, 2:3]], axis=1)
    scale = np.linalg.norm(edges, axis=2).max(axis=1) ** 3
    bad = np.flatnonzero(np.abs(volume) <= DEGENERATE_VOLUME * scale)
    if bad.size:
        raise AssemblyError(f"degenerate tet {int(bad[0])} (volume {volume[bad[0]]:.3e})")
    g = np.transpose(np.linalg.inv(e), (0, 2, 1))
    grads = np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)
    return grads, volume


def assemble_interior(vol: VolumeMesh) -> FemMatrices:
    """Exact P1 Galerkin matrices ``M0``, ``M1`` and ``D``.

    ``D[(c, a), i] = 1/2 (lambda_a, d_c lambda_i) - 1/2 (d_c lambda_a, lambda_i)``,
    the skew splitting of the gradient; its transpose is the matching
    splitting of the divergence.
    """
    grads, volume = tet_gradients(vol)
    nu = vol.n_vertices
    tets = vol.tets

    local_mass = (np.ones((4, 4)) + np.eye(4)) / 20.0
    rows = np.repeat(tets, 4, axis=1).ravel()
    cols = np.tile(tets, (1, 4)).ravel()
    vals = (volume[:, None, None] * local_mass).ravel()
    M0 = sp.coo_matrix((vals, (rows, cols)), shape=(nu, nu)).tocsr()
    # assembled by summation in COO order; symmetrize bitwise
    M0 = ((M0 + M0.T) * 0.5).tocsr()
    M1 = sp.block_diag([M0, M0, M0], format="csr")

    # local D[c, a, i] = vol/8 (g_i[c] - g_a[c])
    gt = np.transpose(grads, (0, 2, 1))  # (nt, 3, 4) -> [c, i]
    loc = (volume / 8.0)[:, None, None, None] * (gt[:, :, None, :] - gt[:, :, :, None])
    comp = np.arange(3)[None, :, None, None]
    r = comp * nu + tets[:, None, :, None]
    c = np.broadcast_to(tets[:, None, None, :], loc.shape)
    r = np.broadcast_to(r, loc.shape)
    D = sp.coo_matrix((loc.ravel(), (r.ravel(), c.ravel())), shape=(3 * nu, nu)).tocsr()
    return FemMatrices(M0, M1, D)


def weak_gradient(vol: VolumeMesh) -> sp.csr_matrix:
    """``G[(c, a), i] = (lambda_a, d_c lambda_i)``.

    Green's formula gives ``D u - C1 gamma u = G u`` for every P1 ``u``,
    which ties the signs of ``D`` and ``C1`` together.
    """
    grads, volume = tet_gradients(vol)
    nu = vol.n_vertices
    tets = vol.tets
    gt = np.transpose(grads, (0, 2, 1))  # [t, c, i]
    loc = np.broadcast_to((volume / 4.0)[:, None, None, None] * gt[:, :, None, :], (len(tets), 3, 4, 4))
    r = np.broadcast_to(np.arange(3)[None, :, None, None] * nu + tets[:, None, :, None], loc.shape)
    c = np.broadcast_to(tets[:, None, None, :], loc.shape)
    return sp.coo_matrix((loc.ravel(), (r.ravel(), c.ravel())), shape=(3 * nu, nu)).tocsr()


def assemble_coupling(vol: VolumeMesh, surf: SurfaceMesh, trace: TraceMap):
    """Boundary coupling matrices ``C0`` (|U| x |Phi|) and ``C1`` (|V| x |Psi|).

    ``C0[i, k] = 1/2 <b_k, gamma lambda_i>`` and
    ``C1[(c, a), l] = -1/2 <lambda_l, n_c gamma lambda_a>``, i.e. the
    opposite sign of the displayed entry formulas so that the matrix system in
    the module docstring is the Galerkin form of the interior equations.
    """
    vt = np.asarray(trace.vertex_trace)
    if vt.size != surf.n_vertices or vt.max(initial=-1) >= vol.n_vertices:
        raise AssemblyError("trace map does not match the surface mesh")
    if not np.allclose(vol.vertices[vt], surf.vertices, rtol=0, atol=1e-12 * (1 + np.abs(surf.vertices).max())):
        raise AssemblyError("trace map points to volume vertices off the surface")
    nu, nt, nb = vol.n_vertices, surf.n_triangles, surf.n_vertices
    area = surf.areas
    tri_b = surf.triangles
    tri_v = vt[tri_b]

    rows = tri_v.ravel()
    cols = np.repeat(np.arange(nt), 3)
    vals = np.repeat(area / 6.0, 3)
    C0 = sp.coo_matrix((vals, (rows, cols)), shape=(nu, nt)).tocsr()

    local = (np.ones((3, 3)) + np.eye(3)) / 12.0  # <lambda_a, lambda_l> / area
    n = surf.normals
    # vals[t, c, a, l]
    v1 = -0.5 * area[:, None, None, None] * n[:, :, None, None] * local[None, None]
    r = np.arange(3)[None, :, None, None] * nu + tri_v[:, None, :, None]
    c = tri_b[:, None, None, :]
    r, c = np.broadcast_arrays(r, c)
    C1 = sp.coo_matrix((v1.ravel(), (r.ravel(), c.ravel())), shape=(3 * nu, nb)).tocsr()
    return C0, C1


def surface_mass_p0(surf: SurfaceMesh) -> sp.csr_matrix:
    return sp.diags(surf.areas).tocsr()


def surface_mass_p1(surf: SurfaceMesh) -> sp.csr_matrix:
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    tri = surf.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    vals = (surf.areas[:, None, None] * local).ravel()
    return sp.coo_matrix((vals, (rows, cols)), shape=(surf.n_vertices,) * 2).tocsr()


def surface_mass_p0p1(surf: SurfaceMesh) -> sp.csr_matrix:
    """Mixed mass ``<b_k^Phi, lambda_l>`` of shape (|Phi|, |Psi|)."""
    nt = surf.n_triangles
    rows = np.repeat(np.arange(nt), 3)
    vals = np.repeat(surf.areas / 3.0, 3)
    return sp.coo_matrix(
        (vals, (rows, surf.triangles.ravel())), shape=(nt, surf.n_vertices)
    ).tocsr()


class SpdSolver:
    """Factorization of a sparse symmetric positive definite matrix.

    Small systems use a sparse LU with symmetric ordering and no pivoting,
    whose pivots are the LDL^T diagonal, so a nonpositive pivot proves the
    matrix is not SPD.  Large systems fall back to Jacobi-preconditioned CG,
    which is cheap for mass matrices (their condition number does not grow
    under refinement).
    """

    def __init__(self, A, method="auto", rtol=1e-13):
        A = sp.csc_matrix(A, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise FactorizationError("matrix is not square")
        asym = abs(A - A.T).max() if A.nnz else 0.0
        if asym > 1e-12 * max(abs(A).max(), 1e-300):
            raise FactorizationError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
        diag = A.diagonal()
        if np.any(diag <= 0):
            raise FactorizationError("matrix has a nonpositive diagonal entry")
        if method == "auto":
            method = "direct" if n <= DIRECT_SOLVER_LIMIT else "cg"
        self.A = A.tocsr()
        self.n = n
        self.method = method
        self.rtol = rtol
        if method == "direct":
            try:
                lu = spla.splu(
                    A,
                    permc_spec="MMD_AT_PLUS_A",
                    diag_pivot_thresh=0.0,
                    options=dict(SymmetricMode=True),
                )
            except RuntimeError as exc:
                raise FactorizationError(f"factorization failed: {exc}") from exc
            piv = lu.U.diagonal()
            if np.any(piv <= 0) or not np.all(np.isfinite(piv)):
                raise FactorizationError("matrix is not positive definite")
            self._lu = lu
        elif method == "cg":
            self._inv_diag = 1.0 / diag
        else:
            raise FactorizationError(f"unknown method {method!r}")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.method == "direct":
            return self._lu.solve(b)
        if b.ndim == 2:
            return np.column_stack([self.solve(col) for col in b.T])
        return self._pcg(b)

    def _pcg(self, b):
        A, dinv = self.A, self._inv_diag
        bnorm = np.linalg.norm(b)
        x = np.zeros_like(b)
        if bnorm == 0:
            return x
        r = b.copy()
        z = dinv * r
        p = z.copy()
        rz = r @ z
        for _ in range(10 * self.n + 100):
            Ap = A @ p
            a = rz / (p @ Ap)
            if not a > 0:
                raise FactorizationError("matrix is not positive definite")
            x += a * p
            r -= a * Ap
            if np.linalg.norm(r) <= self.rtol * bnorm:
                return x
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        raise ConvergenceError("CG did not converge", last=x)


class ReplicatedSolver:
    """Solver for ``kron(I_k, A)`` reusing one factorization of ``A``."""

    def __init__(self, base: SpdSolver, k: int):
        self.base = base
        self.k = k
        self.n = base.n * k

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        n = self.base.n
        if b.ndim == 1:
            x = self.base.solve(b.reshape(self.k, n).T)
            return x.T.reshape(-1)
        m = b.shape[1]
        blk = b.reshape(self.k, n, m).transpose(1, 0, 2).reshape(n, self.k * m)
        x = self.base.solve(blk)
        return x.reshape(n, self.k, m).transpose(1, 0, 2).reshape(self.k * n, m)


def factorize_spd(A, method="auto") -> SpdSolver:
    return SpdSolver(A, method=method)


def solve(solver, b):
    return solver.solve(b)


def mass_solvers(mats: FemMatrices):
    """Solvers for ``M0`` and ``M1`` sharing the scalar factorization."""
    s0 = factorize_spd(mats.M0)
    return s0, ReplicatedSolver(s0, mats.n_v // mats.n_u)


def estimate_D_norm(mats: FemMatrices, rtol=1e-4, max_iter=10_000, seed=0, solvers=None):
    """``||M1^{-1/2} D M0^{-1/2}||_2`` by power iteration.

    Iterates on ``M0^{-1} D^T M1^{-1} D`` (same nonzero spectrum as
    ``M1^{-1} D M0^{-1} D^T`` on the smaller space) with the M0-Rayleigh
    quotient, and stops once the M0-residual of the Ritz pair is below
    ``rtol`` times the Ritz value.
    """
    D = mats.D
    if D.nnz == 0 or abs(D).max() == 0:
        return 0.0
    s0, s1 = solvers if solvers is not None else mass_solvers(mats)
    M0 = mats.M0
    x = np.random.default_rng(seed).standard_normal(mats.n_u)
    x /= np.sqrt(x @ (M0 @ x))
    theta = 0.0
    for it in range(max_iter):
        w = D.T @ s1.solve(D @ x)  # M0 y = w
        y = s0.solve(w)
        theta = x @ w  # x is M0-normalized
        r = y - theta * x
        res = np.sqrt(max(r @ (M0 @ r), 0.0))
        if theta > 0 and res <= rtol * theta:
            return float(np.sqrt(theta))
        nrm = np.sqrt(y @ (M0 @ y))
        if nrm == 0:
            return 0.0
        x = y / nrm
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", last=float(np.sqrt(theta))
    )


def write_triplets(A, path) -> None:
    """Write ``i j value`` lines (zero-based) for a sparse or dense matrix."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row, A.col, A.data):
            if np.iscomplexobj(v):
                fh.write(f"{i} {j} {float(v.real)!r} {float(v.imag)!r}\n")
            else:
                fh.write(f"{i} {j} {float(v)!r}\n")
