"""BDF2 convolution quadrature weights by contour sampling.

For a transfer function ``F`` the weights ``W_n`` are the Taylor coefficients
of ``F(delta(zeta) / dt)`` with ``delta(zeta) = (1 - zeta) + (1 - zeta)^2 / 2``.
They are recovered from ``M = N + 1`` samples on the circle ``|zeta| = lam``
by a discrete Fourier transform; the aliasing error is of size ``lam^M``
and round-off is amplified by ``lam^-N``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ContourError, InvalidParameterError

THREADS_ENV = "WAVECOUPLE_THREADS"
CONTOUR_EPS = 1e-12
ALIAS_TOL = 1e-3
REAL_TOL = 1e-8


def bdf2_delta(zeta):
    return 1.5 - 2.0 * zeta + 0.5 * zeta**2


def thread_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise InvalidParameterError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidParameterError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def default_contour_radius(N: int, eps: float = CONTOUR_EPS) -> float:
    """``lam = eps^(1 / (2 (N + 1)))``: aliasing ``sqrt(eps)``, amplification ``eps^-1/2``."""
    return float(eps ** (1.0 / (2 * (N + 1))))


def check_contour(lam: float, N: int, tol: float = ALIAS_TOL) -> None:
    if not 0.0 < lam < 1.0:
        raise InvalidParameterError(f"contour radius must lie in (0, 1), got {lam}")
    alias = lam ** (N + 1)
    if alias > tol:
        raise ContourError(
            f"contour radius {lam} gives aliasing factor lam^(N+1) = {alias:.3e} > {tol:g}"
        )


def sample_frequencies(dt: float, N: int, lam: float) -> np.ndarray:
    M = N + 1
    zeta = lam * np.exp(2j * np.pi * np.arange(M) / M)
    s = bdf2_delta(zeta) / dt
    if np.any(s.real <= 0):
        raise ContourError("a contour sample has Re s <= 0")
    return s


def _validate(dt, N, lam):
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if int(N) != N or N < 0:
        raise InvalidParameterError(f"N must be a nonnegative integer, got {N}")
    N = int(N)
    lam = default_contour_radius(N) if lam is None else float(lam)
    check_contour(lam, N)
    return N, lam


def _evaluate(F, s_values, workers):
    workers = thread_count() if workers is None else workers
    if workers <= 1 or len(s_values) <= 1:
        return [np.asarray(F(s)) for s in s_values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return [np.asarray(x) for x in pool.map(F, s_values)]


def cq_weights(F, dt: float, N: int, lam: float = None, workers: int = None,
               real_tol: float = REAL_TOL) -> np.ndarray:
    """Real CQ weights ``W_0 .. W_N`` of a real transfer function.

    ``F`` maps a complex frequency to a scalar or array and must satisfy
    ``F(conj s) = conj F(s)``; only the samples on the upper half circle are
    evaluated.  The samples at real frequencies must be real to ``real_tol``
    relative, otherwise :class:`ContourError` is raised.

    Returns an array of shape ``(N + 1,) + F(s).shape``.
    """
    N, lam = _validate(dt, N, lam)
    M = N + 1
    s = sample_frequencies(dt, N, lam)
    half = M // 2 + 1
    samples = np.stack(_evaluate(F, list(s[:half]), workers))
    real_idx = [0] + ([M // 2] if M % 2 == 0 else [])
    scale = max(np.abs(samples.real).max(), np.finfo(float).tiny)
    for l in real_idx:
        im = np.abs(samples[l].imag).max()
        if im > real_tol * scale:
            raise ContourError(
                f"sample at real frequency {s[l].real:.6g} has imaginary part {im:.3e}"
            )
    # sum_l F_l exp(-2 pi i l n / M) for Hermitian F equals irfft of conj(F)
    W = np.fft.irfft(np.conj(samples), n=M, axis=0) if M > 1 else samples.real.copy()
    W *= (lam ** -np.arange(M, dtype=float)).reshape((M,) + (1,) * (W.ndim - 1))
    return W


def cq_weights_full(F, dt: float, N: int, lam: float = None, workers: int = None,
                    real_tol: float = REAL_TOL) -> np.ndarray:
    """Same as :func:`cq_weights` but samples the whole circle and checks that
    the recombined weights are real before discarding imaginary parts."""
    N, lam = _validate(dt, N, lam)
    M = N + 1
    s = sample_frequencies(dt, N, lam)
    samples = np.stack(_evaluate(F, list(s), workers))
    Wc = np.fft.fft(samples, axis=0) / M
    Wc *= (lam ** -np.arange(M, dtype=float)).reshape((M,) + (1,) * (Wc.ndim - 1))
    im, re = np.abs(Wc.imag).max(), np.abs(Wc.real).max()
    if im > real_tol * max(re, np.finfo(float).tiny):
        raise ContourError(f"weights have imaginary part {im:.3e} vs real part {re:.3e}")
    return Wc.real.copy()


def convolve(weights, seq, n=None):
    """``y_n = sum_{j <= n} W_{n-j} @ g_j`` for all ``n`` (or a single ``n``).

    ``weights`` has shape ``(N+1, ...)``; ``seq`` has shape ``(m, ...)``.
    Scalar weights multiply, matrix weights act on vector sequence entries.
    """
    W = np.asarray(weights)
    g = np.asarray(seq)
    if n is not None:
        return _conv_at(W, g, n)
    return np.stack([_conv_at(W, g, k) for k in range(len(g))])


def _conv_at(W, g, n):
    idx = np.arange(n + 1)
    Wk = W[n - idx]
    if W.ndim == 1:
        return np.tensordot(Wk, g[: n + 1], axes=(0, 0))
    return np.einsum("jab,jb...->a...", Wk, g[: n + 1])
