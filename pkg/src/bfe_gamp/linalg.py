"""Dense linear-algebra primitives, seeded random streams and a warm-started CG.

Matrices are plain 2-D ``numpy`` float arrays.  All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericalError, ParameterError

# ---------------------------------------------------------------------------
# random streams
# ---------------------------------------------------------------------------

STREAM_MATRIX = 0
STREAM_SIGNAL = 1
STREAM_NOISE = 2


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """PCG64 generator for ``seed`` and a sub-stream ``key``.

    Stream splitting uses ``SeedSequence(seed, spawn_key=key)`` so that
    each (seed, key) pair maps to an independent, platform-stable stream.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed derived from ``seed`` and ``key``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal draws by the Box-Muller transform.

    Only ``rng.random`` is consumed, so the draws depend on the PCG64 bit
    stream and nothing else.
    """
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    count = int(np.prod(shape)) if shape else 1
    half = (count + 1) // 2
    u1 = 1.0 - rng.random(half)  # (0, 1], keeps the log finite
    u2 = rng.random(half)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty(2 * half)
    out[0::2] = rad * np.cos(ang)
    out[1::2] = rad * np.sin(ang)
    return out[:count].reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def _as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ParameterError(f"expected a 2-D matrix, got shape {A.shape}")
    return A


def matvec(A, x) -> np.ndarray:
    """Return ``A @ x`` after checking dimensions."""
    A = _as_matrix(A)
    x = np.asarray(x, dtype=float)
    if x.shape != (A.shape[1],):
        raise ParameterError(f"matvec: A is {A.shape} but x has shape {x.shape}")
    return A @ x


def elementwise_square(A) -> np.ndarray:
    """Entrywise square ``S = A.^2`` used by all variance recursions."""
    A = _as_matrix(A)
    return A * A


def householder_qr(M) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR factorization with a non-negative diagonal in ``R``.

    Backed by LAPACK's Householder routine through ``numpy.linalg.qr``.  The
    sign convention makes the factorization unique, so ``Q`` built from a
    Gaussian matrix is Haar distributed.
    """
    M = _as_matrix(M)
    Q, R = np.linalg.qr(M, mode="reduced")
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return Q * signs, R * signs[:, None]


def peak_to_average(sigmas) -> float:
    """Peak-to-average ratio ``max(s^2) / mean(s^2)`` of singular values."""
    s2 = np.asarray(sigmas, dtype=float) ** 2
    if s2.size == 0 or not np.any(s2 > 0):
        raise ParameterError("peak_to_average needs at least one nonzero value")
    return float(s2.max() / s2.mean())


def geometric_spectrum(ratio: float, r: int) -> np.ndarray:
    """Singular values ``ratio**k``, k = 0..r-1, so that sigma_1 = 1."""
    return ratio ** np.arange(r, dtype=float)


def spectrum_for_kappa(kappa: float, r: int, tol: float = 1e-10) -> np.ndarray:
    """Log-spaced singular values with peak-to-average ratio ``kappa``.

    The geometric ratio is located by bisection; ``peak_to_average`` is
    decreasing in the ratio, from ``r`` at 0 down to 1 at 1.
    """
    if r < 1:
        raise ParameterError("spectrum needs r >= 1")
    if not (1.0 <= kappa <= r):
        raise ParameterError(f"kappa_target={kappa} outside [1, {r}]")
    if kappa == 1.0 or r == 1:
        return np.ones(r)
    lo, hi = 1e-12, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if peak_to_average(geometric_spectrum(mid, r)) > kappa:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    best = 0.5 * (lo + hi)
    sig = geometric_spectrum(best, r)
    if abs(peak_to_average(sig) - kappa) > tol * max(1.0, kappa) and kappa < r:
        raise NumericalError(f"bisection for kappa={kappa} did not reach tolerance")
    return sig


@dataclass(frozen=True)
class SpectralSpec:
    m: int
    n: int
    kappa_target: float
    seed: int


def build_spectral_matrix(spec: SpectralSpec) -> np.ndarray:
    """``A = U diag(sigma) V^T`` with Haar factors and a prescribed kappa.

    U and V come from QR factorizations of two independent Gaussian draws
    taken from the sub-streams ``(seed, STREAM_MATRIX, 0)`` and ``(..., 1)``.
    """
    m, n = int(spec.m), int(spec.n)
    if m < 1 or n < 1:
        raise ParameterError("m and n must be >= 1")
    r = min(m, n)
    sig = spectrum_for_kappa(float(spec.kappa_target), r)
    U, _ = householder_qr(gaussian(make_rng(spec.seed, STREAM_MATRIX, 0), (m, r)))
    V, _ = householder_qr(gaussian(make_rng(spec.seed, STREAM_MATRIX, 1), (n, r)))
    return (U * sig) @ V.T


def iid_gaussian_matrix(m: int, n: int, seed: int) -> np.ndarray:
    """Matrix with i.i.d. N(0, 1/m) entries."""
    return gaussian(make_rng(seed, STREAM_MATRIX, 0), (m, n)) / np.sqrt(m)


def singular_values_qr(A, iters: int = 500, tol: float = 1e-14) -> np.ndarray:
    """Singular values by unshifted QR iteration on ``A^T A`` (small inputs).

    Independent of the synthesis path; used only to check generated spectra.
    """
    A = _as_matrix(A)
    G = A.T @ A if A.shape[0] >= A.shape[1] else A @ A.T
    for _ in range(iters):
        Q, R = householder_qr(G)
        G = R @ Q
        off = np.linalg.norm(G - np.diag(np.diag(G)))
        if off <= tol * np.linalg.norm(G):
            break
    ev = np.clip(np.diag(G), 0.0, None)
    return np.sort(np.sqrt(ev))[::-1]


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs,
    x0,
    max_iters: int,
    tol: float,
) -> np.ndarray:
    """Conjugate gradients for an SPD operator, warm-started at ``x0``.

    Stops after ``max_iters`` iterations or once the residual norm is at most
    ``tol * ||rhs||``.
    """
    b = np.asarray(rhs, dtype=float)
    x = np.array(x0, dtype=float, copy=True)
    r = b - apply(x)
    stop = tol * np.linalg.norm(b)
    rr = float(r @ r)
    if not np.isfinite(rr):
        raise NumericalError("cg_solve: non-finite residual")
    if np.sqrt(rr) <= stop:
        return x
    d = r.copy()
    for _ in range(int(max_iters)):
        Ad = apply(d)
        dAd = float(d @ Ad)
        if not np.isfinite(dAd):
            raise NumericalError("cg_solve: non-finite curvature")
        if dAd <= 0.0:
            break
        alpha = rr / dAd
        x += alpha * d
        r -= alpha * Ad
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise NumericalError("cg_solve: non-finite residual")
        if np.sqrt(rr_new) <= stop:
            break
        d = r + (rr_new / rr) * d
        rr = rr_new
    return x
