"""Galerkin Calderon matrix ``B(s) = [[s V, K], [-K^T, W / s]]`` and its
BDF2 convolution quadrature weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bem import BoundaryAssembler, BoundaryOps, QuadratureConfig, check_frequency
from .cq import cq_weights, default_contour_radius
from .errors import InvalidParameterError
from .mesh import SurfaceMesh

COERCIVITY_RTOL = 1e-6


@dataclass(frozen=True)
class CalderonBlock:
    s: complex
    M: np.ndarray
    n_phi: int
    n_psi: int

    def __post_init__(self):
        d = self.n_phi + self.n_psi
        if self.M.shape != (d, d):
            raise InvalidParameterError(
                f"Calderon matrix shape {self.M.shape} does not match ({d}, {d})"
            )

    @property
    def tolerance(self) -> float:
        """Quadrature allowance ``1e-6 * max |M_ij|`` for positivity checks."""
        return COERCIVITY_RTOL * float(np.abs(self.M).max())


def calderon_matrix(ops: BoundaryOps) -> np.ndarray:
    s = ops.s
    return np.block([[s * ops.V, ops.K], [-ops.KT, ops.W / s]])


def assemble_calderon(s, surf: SurfaceMesh, q: QuadratureConfig = None,
                      assembler: BoundaryAssembler = None) -> CalderonBlock:
    s = check_frequency(s)
    asm = assembler or BoundaryAssembler(surf, q)
    ops = asm.operators(s)
    return CalderonBlock(s, calderon_matrix(ops), asm.nt, asm.nv)


def coercivity_probe(B, trials: int = 100, seed: int = 0) -> float:
    """Minimum of ``Re w^H M w`` over seeded random complex unit vectors.

    ``B`` is a :class:`CalderonBlock` or a square array.
    """
    if trials < 1:
        raise InvalidParameterError(f"trials must be >= 1, got {trials}")
    M = B.M if isinstance(B, CalderonBlock) else np.asarray(B)
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((M.shape[0], trials)) + 1j * rng.standard_normal((M.shape[0], trials))
    w /= np.linalg.norm(w, axis=0)
    q = np.einsum("it,it->t", w.conj(), M @ w)
    return float(q.real.min())


@dataclass(frozen=True)
class CqWeights:
    """Real weights ``B_0 .. B_N`` stacked in ``W`` of shape ``(N+1, d, d)``."""

    dt: float
    N: int
    lam: float
    W: np.ndarray
    n_phi: int
    n_psi: int

    def __post_init__(self):
        d = self.n_phi + self.n_psi
        if self.W.shape != (self.N + 1, d, d):
            raise InvalidParameterError(f"weights shape {self.W.shape} inconsistent with N={self.N}, d={d}")

    def __len__(self):
        return self.N + 1

    @property
    def dim(self) -> int:
        return self.n_phi + self.n_psi

    def history(self, seq, n):
        """``sum_{j<n} B_{n-j} w_j`` for the stacked unknowns ``seq[:n]``."""
        if n == 0:
            return np.zeros(self.dim)
        idx = np.arange(n)
        return np.einsum("jab,jb->a", self.W[n - idx], np.asarray(seq[:n]))

    def apply(self, seq, n):
        """``sum_{j<=n} B_{n-j} w_j``."""
        return self.history(seq, n) + self.W[0] @ np.asarray(seq[n])


def cq_calderon_weights(surf: SurfaceMesh, dt: float, N: int, lam: float = None,
                        q: QuadratureConfig = None, assembler: BoundaryAssembler = None,
                        workers: int = None) -> CqWeights:
    asm = assembler or BoundaryAssembler(surf, q)
    lam = default_contour_radius(N) if lam is None else lam

    def F(s):
        return calderon_matrix(asm.operators(s))

    W = cq_weights(F, dt, N, lam, workers=workers)
    return CqWeights(float(dt), int(N), float(lam), W, asm.nt, asm.nv)


def herglotz_form(weights: CqWeights, seq, rho: float):
    """``sum_n rho^(2n) Re <w_n, sum_j B_{n-j} w_j>`` and ``sum_n rho^(2n) |w_n|^2``."""
    seq = np.asarray(seq)
    if len(seq) > len(weights):
        raise InvalidParameterError("sequence longer than the weight table")
    form = 0.0
    norm = 0.0
    for n in range(len(seq)):
        r2 = rho ** (2 * n)
        form += r2 * float(np.real(np.vdot(seq[n], weights.apply(seq, n))))
        norm += r2 * float(np.vdot(seq[n], seq[n]).real)
    return form, norm
