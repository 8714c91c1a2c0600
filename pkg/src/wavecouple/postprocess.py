"""Exterior evaluation by the CQ representation formula and error norms.

The exterior field is ``u+ = S(d_t) d_t phi + D(d_t) psi``.  Its CQ
discretization at ``t_{n+1/2}`` uses the boundary unknowns of the coupled
scheme, which live on half steps::

    u+(t_{n+1/2}) = sum_{j<=n} [s S]_{n-j} phi^{j+1/2} + [D]_{n-j} psibar^{j+1/2}

with ``[F]_k`` the BDF2 weights of the transfer function ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .bem import QuadratureConfig, check_proximity, potential_matrices
from .cq import cq_weights, default_contour_radius
from .errors import InvalidParameterError
from .mesh import SurfaceMesh, VolumeMesh


@dataclass(frozen=True, eq=False)
class ExteriorProbe:
    """``values[n, p]`` is the field at ``points[p]`` and ``times[n]``."""

    points: np.ndarray
    times: np.ndarray
    values: np.ndarray

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("point_id,step,time,value\n")
            for p in range(len(self.points)):
                for n, t in enumerate(self.times):
                    fh.write(f"{p},{n},{float(t)!r},{float(self.values[n, p])!r}\n")


@dataclass(frozen=True, eq=False)
class PotentialWeights:
    """CQ weights of ``x -> s S(s)`` (``WS``) and ``x -> D(s)`` (``WD``)."""

    dt: float
    lam: float
    WS: np.ndarray
    WD: np.ndarray

    def __len__(self):
        return len(self.WS)


def potential_weights(points, surf: SurfaceMesh, dt: float, N: int, lam: float = None,
                      q: QuadratureConfig = None, workers: int = None) -> PotentialWeights:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    check_proximity(points, surf)
    lam = default_contour_radius(N) if lam is None else lam
    n_phi = surf.n_triangles

    def F(s):
        S, D = potential_matrices(s, points, surf, q, check=False)
        return np.concatenate([s * S, D], axis=1)

    W = cq_weights(F, dt, N, lam, workers=workers)
    return PotentialWeights(float(dt), float(lam), W[:, :, :n_phi], W[:, :, n_phi:])


def eval_exterior(points, phi_hist, psi_hist, dt: float, surf: SurfaceMesh, lam: float = None,
                  q: QuadratureConfig = None, weights: PotentialWeights = None) -> ExteriorProbe:
    """Exterior values at ``t_{n+1/2}``, ``n = 0 .. len(phi_hist) - 1``.

    ``phi_hist`` and ``psi_hist`` are the half-step boundary unknowns
    ``phi^{j+1/2}`` and ``psibar^{j+1/2}`` of the coupled scheme.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    try:
        phi = np.asarray(phi_hist, dtype=float).reshape(len(phi_hist), surf.n_triangles)
        psi = np.asarray(psi_hist, dtype=float).reshape(len(psi_hist), surf.n_vertices)
    except ValueError:
        raise InvalidParameterError("density histories do not match the surface mesh") from None
    if len(phi) != len(psi):
        raise InvalidParameterError("density histories have different lengths")
    m = len(phi)
    times = (np.arange(m) + 0.5) * dt
    if m == 0:
        check_proximity(points, surf)
        return ExteriorProbe(points, times, np.zeros((0, len(points))))
    if weights is None:
        weights = potential_weights(points, surf, dt, m - 1, lam, q)
    elif len(weights) < m:
        raise InvalidParameterError("potential weights shorter than the histories")
    else:
        check_proximity(points, surf)
    values = np.empty((m, len(points)))
    for n in range(m):
        k = np.arange(n + 1)
        values[n] = np.einsum("kpa,ka->p", weights.WS[n - k], phi[: n + 1]) + np.einsum(
            "kpa,ka->p", weights.WD[n - k], psi[: n + 1]
        )
    return ExteriorProbe(points, times, values)


def compare_fields(a, b, mass) -> dict:
    """Mass-weighted L2 and max-norm of ``a - b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or mass.shape[0] != a.shape[0]:
        raise InvalidParameterError(
            f"dimension mismatch: {a.shape}, {b.shape}, mass {mass.shape}"
        )
    d = a - b
    return {
        "l2_error": float(np.sqrt(max(d @ (mass @ d), 0.0))),
        "linf_error": float(np.abs(d).max()) if d.size else 0.0,
    }


class PointLocator:
    """Barycentric P1 evaluation of volume-mesh fields at arbitrary points."""

    def __init__(self, vol: VolumeMesh, candidates: int = 24):
        self.vol = vol
        p = vol.vertices[vol.tets]
        self.tree = cKDTree(p.mean(axis=1))
        self.k = min(candidates, vol.n_tets)
        e = p[:, 1:] - p[:, :1]
        self.inv = np.linalg.inv(np.transpose(e, (0, 2, 1)))
        self.origin = p[:, 0]

    def locate(self, points, tol=1e-10):
        """Tet index and barycentric coordinates ``(npts, 4)`` per point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        _, cand = self.tree.query(points, k=self.k)
        cand = np.atleast_2d(cand).reshape(len(points), -1)
        tets = np.empty(len(points), dtype=np.int64)
        bary = np.empty((len(points), 4))
        for i, x in enumerate(points):
            c = cand[i]
            lam = np.einsum("kij,kj->ki", self.inv[c], x - self.origin[c])
            full = np.column_stack([1.0 - lam.sum(axis=1), lam])
            score = full.min(axis=1)
            best = int(np.argmax(score))
            if score[best] < -tol:
                raise InvalidParameterError(f"point {i} at {x} lies outside the mesh")
            tets[i] = c[best]
            bary[i] = full[best]
        return tets, bary

    def interpolator(self, points):
        """Sparse-free evaluation closure ``values -> values at points``."""
        tets, bary = self.locate(points)
        idx = self.vol.tets[tets]

        def evaluate(values):
            values = np.asarray(values)
            return np.einsum("pk,pk...->p...", bary, values[idx])

        return evaluate


def interpolate_p1(vol: VolumeMesh, values, points):
    return PointLocator(vol).interpolator(points)(values)
