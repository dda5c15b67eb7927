"""Evaluation metrics: RMSE variants, softmax weight distributions,
KL divergence, drag relative error and a Savitzky-Golay post-filter."""

from __future__ import annotations

import numpy as np


def _check_aligned(est: np.ndarray, ref: np.ndarray):
    est = np.asarray(est, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"series shapes differ: {est.shape} vs {ref.shape}")
    return est, ref


def rmse_per_axis(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Root mean square error along each axis of aligned (n, 3) series."""
    est, ref = _check_aligned(est, ref)
    return np.sqrt(np.mean((est - ref) ** 2, axis=0))


def rmse_euclidean(est: np.ndarray, ref: np.ndarray) -> float:
    """Root mean squared Euclidean distance between aligned position series.

    With a target series as the reference this is the control error metric.
    """
    est, ref = _check_aligned(est, ref)
    return float(np.sqrt(np.mean(np.sum((est - ref) ** 2, axis=-1))))


def error_std_per_axis(est: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Standard deviation of the per-axis error series."""
    est, ref = _check_aligned(est, ref)
    return np.std(est - ref, axis=0)


def softmax_weights(M: np.ndarray, diagonal_only: bool = False) -> np.ndarray:
    """Softmax-normalized entries of a square matrix (or of its diagonal).

    Note the result is not invariant under scaling of ``M``; that is a
    property of the softmax, not a defect.
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    vals = np.diag(M) if diagonal_only else M.ravel()
    vals = vals - np.max(vals)           # overflow guard, mathematically neutral
    e = np.exp(vals)
    return e / e.sum()


def kl_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete Kullback-Leibler divergence sum(p * ln(p / q))."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise ValueError(f"distribution supports differ: {p.shape} vs {q.shape}")
    if np.any(q <= 0.0):
        raise ValueError("q must be strictly positive")
    mask = p > 0.0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def drag_relative_rmse(est_diags: np.ndarray, true_diags: np.ndarray) -> float:
    """Root mean square of the per-entry relative diagonal errors, in percent."""
    est_diags, true_diags = _check_aligned(est_diags, true_diags)
    if np.any(true_diags == 0.0):
        raise ValueError("true drag diagonal contains zeros")
    rel = (est_diags - true_diags) / true_diags * 100.0
    return float(np.sqrt(np.mean(rel ** 2)))


def savitzky_golay(series: np.ndarray, order: int = 3, frame: int = 9) -> np.ndarray:
    """Least-squares polynomial smoothing with a symmetric window.

    Works per column for 2-D input.  Endpoints are handled by fitting the
    boundary window's polynomial and evaluating it at the off-center
    positions, so polynomials up to ``order`` are reproduced exactly
    everywhere.
    """
    series = np.asarray(series, dtype=float)
    if frame % 2 == 0:
        raise ValueError("frame length must be odd")
    if frame <= order:
        raise ValueError("frame length must exceed the polynomial order")
    n = series.shape[0]
    if n < frame:
        raise ValueError(f"series length {n} shorter than frame {frame}")

    squeeze = series.ndim == 1
    y = series[:, None] if squeeze else series
    half = frame // 2
    pos = np.arange(frame, dtype=float) - half
    V = np.vander(pos, order + 1, increasing=True)
    pinv = np.linalg.pinv(V)                  # (order+1, frame)

    out = np.empty_like(y)
    kernel = pinv[0]                          # polynomial value at the window center
    for c in range(y.shape[1]):
        out[half:n - half, c] = np.convolve(y[:, c], kernel[::-1], mode="valid")

    head_coeff = pinv @ y[:frame]             # (order+1, cols)
    tail_coeff = pinv @ y[n - frame:]
    out[:half] = V[:half] @ head_coeff
    out[n - half:] = V[half + 1:] @ tail_coeff
    return out[:, 0] if squeeze else out
