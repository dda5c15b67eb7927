"""Coherence-augmented forward Kalman pass, backward smoother and the
error-propagation matrix over one sliding window.

A window of length ``k_w`` re-estimates the last ``k_w`` timesteps.  Every
step except the newest is augmented with the previous window's posterior at
the same timestep, treated as an extra 6-dimensional pseudo-measurement
with that posterior's covariance as its noise.  The error-propagation
matrix E collects the product (I - K_j C_j) A_{j-1} over the window and
measures how an initial-state perturbation survives to the final state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InnovationNotPD

N_STATE = 6
N_MEAS = 4

_I6 = np.eye(6)


@dataclass
class StateBelief:
    """Gaussian state belief: 6-vector mean and 6x6 covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def validate(self) -> None:
        if self.mean.shape != (N_STATE,) or self.cov.shape != (N_STATE, N_STATE):
            raise ValueError("state belief must be a 6-vector with 6x6 covariance")
        scale = max(float(np.max(np.abs(self.cov))), 1.0)
        if float(np.max(np.abs(self.cov - self.cov.T))) > 1e-9 * scale:
            raise ValueError("covariance is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (self.cov + self.cov.T))
        if eigs[0] < -1e-9 * max(float(np.trace(self.cov)), 1.0):
            raise ValueError("covariance is not positive semi-definite")


@dataclass
class WindowBuffer:
    """All inputs one sliding window needs.

    ``prior_means``/``prior_covs`` hold the previous window's outputs at the
    k_w steps preceding the newest one; the first entry initializes the
    filter (its covariance is reset by the caller), the remaining entries
    feed the coherence augmentation.  ``meas_covs`` carries the per-step
    4x4 observation covariance, i.e. the shared base matrix after each
    step's sensor-status amendment.
    """

    k_w: int
    prior_means: list            # k_w entries of 6-vectors, steps 0..k_w-1
    prior_covs: list             # k_w entries of 6x6, steps 0..k_w-1
    A: list                      # k_w transition matrices, index j-1 maps j-1 -> j
    inputs: list                 # k_w input 6-vectors, steps 1..k_w
    measurements: list           # k_w raw 4-vectors, steps 1..k_w
    C: list                      # k_w raw 4x6 observation matrices, steps 1..k_w
    Q: np.ndarray                # shared 6x6 process covariance
    meas_covs: list              # k_w amended 4x4 observation covariances
    augmented: bool = True       # coherence augmentation on/off
    Q_steps: list | None = None  # optional per-step Q, overrides the shared one

    def __post_init__(self):
        k = self.k_w
        for name in ("prior_means", "prior_covs", "A", "inputs",
                     "measurements", "C", "meas_covs"):
            if len(getattr(self, name)) != k:
                raise ValueError(f"{name} must have {k} entries")

    def process_cov(self, j: int) -> np.ndarray:
        if self.Q_steps is not None:
            return self.Q_steps[j - 1]
        return self.Q


@dataclass
class ForwardPass:
    """Forward filter products retained for smoothing and error analysis."""

    prior_means: list
    prior_covs: list
    post_means: list             # k_w + 1 entries, index 0 is the init
    post_covs: list
    gains: list                  # k_w Kalman gains (6 x m_j)
    C_eff: list                  # k_w effective observation matrices (m_j x 6)


@dataclass
class SmoothedWindow:
    """Backward-smoothed posteriors over the window (k_w + 1 states)."""

    means: list
    covs: list
    gains: list                  # k_w smoother gains, gains[j-1] couples j-1 <- j


@dataclass
class ErrorPropagation:
    """Error-propagation matrix with its two scalar summaries."""

    E: np.ndarray
    avg_trace: float
    reduced_det: float


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def augment_step(y: np.ndarray, C: np.ndarray, R: np.ndarray,
                 prior_mean: np.ndarray, prior_cov: np.ndarray,
                 is_last: bool):
    """Append the previous window's posterior as a pseudo-measurement.

    The newest step of a window carries no augmentation and is returned
    unchanged.
    """
    if is_last:
        return y, C, R
    m = y.shape[0]
    y_aug = np.empty(m + N_STATE)
    y_aug[:m] = y
    y_aug[m:] = prior_mean
    C_aug = np.zeros((m + N_STATE, N_STATE))
    C_aug[:m] = C
    C_aug[m:] = _I6
    R_aug = np.zeros((m + N_STATE, m + N_STATE))
    R_aug[:m, :m] = R
    R_aug[m:, m:] = prior_cov
    return y_aug, C_aug, R_aug


def forward_filter(buffer: WindowBuffer, init: StateBelief) -> ForwardPass:
    """Run the augmented Kalman filter over one window.

    The gain solve factorizes the innovation covariance (Cholesky); a
    failed factorization raises :class:`InnovationNotPD`.
    """
    k_w = buffer.k_w
    x = np.array(init.mean, dtype=float)
    P = np.array(init.cov, dtype=float)

    prior_means, prior_covs = [], []
    post_means, post_covs = [x], [P]
    gains, C_eff = [], []

    for j in range(1, k_w + 1):
        A = buffer.A[j - 1]
        u = buffer.inputs[j - 1]
        y = buffer.measurements[j - 1]
        C = buffer.C[j - 1]
        R = buffer.meas_covs[j - 1]

        if buffer.augmented:
            # the pseudo-measurement anchors step j to the previous window's
            # estimate at the same global timestep, i.e. entry j (entry 0 is
            # the window-start state); the newest step has no counterpart
            y_t, C_t, R_t = augment_step(
                y, C, R,
                buffer.prior_means[j] if j < k_w else None,
                buffer.prior_covs[j] if j < k_w else None,
                is_last=(j == k_w),
            )
        else:
            y_t, C_t, R_t = y, C, R

        # prediction
        P_pred = A @ P @ A.T + buffer.process_cov(j)
        x_pred = A @ x + u

        # gain via a PD factorization of the innovation covariance
        CP = C_t @ P_pred
        S = CP @ C_t.T + R_t
        S = 0.5 * (S + S.T)
        try:
            K = cho_solve(cho_factor(S, lower=True, check_finite=False), CP,
                          check_finite=False).T
        except np.linalg.LinAlgError as exc:
            raise InnovationNotPD(
                f"innovation covariance not PD at window step {j}"
            ) from exc

        # update, plain form with symmetrization
        P = P_pred - K @ CP
        P = 0.5 * (P + P.T)
        x = x_pred + K @ (y_t - C_t @ x_pred)

        prior_means.append(x_pred)
        prior_covs.append(P_pred)
        post_means.append(x)
        post_covs.append(P)
        gains.append(K)
        C_eff.append(C_t)

    return ForwardPass(prior_means, prior_covs, post_means, post_covs,
                       gains, C_eff)


def backward_smooth(fp: ForwardPass, buffer: WindowBuffer) -> SmoothedWindow:
    """Backward pass: smooth the forward posteriors from the newest step down."""
    k_w = buffer.k_w
    means = [None] * (k_w + 1)
    covs = [None] * (k_w + 1)
    means[k_w] = fp.post_means[k_w]
    covs[k_w] = fp.post_covs[k_w]

    # the gains depend only on forward covariances, so all solves batch:
    # G_j = P_post_{j-1} A_{j-1}^T P_pred_j^{-1}, predicted covs symmetric
    P_preds = np.stack(fp.prior_covs)
    AP = np.stack([buffer.A[j] @ fp.post_covs[j] for j in range(k_w)])
    try:
        gains_T = np.linalg.solve(P_preds, AP)
    except np.linalg.LinAlgError as exc:
        raise InnovationNotPD("predicted covariance not invertible") from exc
    gains = [gains_T[j].T for j in range(k_w)]

    for j in range(k_w, 0, -1):
        G = gains[j - 1]
        P_pred = fp.prior_covs[j - 1]
        means[j - 1] = fp.post_means[j - 1] + G @ (means[j] - fp.prior_means[j - 1])
        covs[j - 1] = _sym(fp.post_covs[j - 1] + G @ (covs[j] - P_pred) @ G.T)

    return SmoothedWindow(means, covs, gains)


def error_propagation(fp: ForwardPass, buffer: WindowBuffer) -> ErrorPropagation:
    """Collect E = prod_j (I - K_j C_j) A_{j-1} and its trace/determinant summaries."""
    E = np.eye(N_STATE)
    for j in range(1, buffer.k_w + 1):
        F = (_I6 - fp.gains[j - 1] @ fp.C_eff[j - 1]) @ buffer.A[j - 1]
        E = F @ E
    avg_trace = float(np.trace(E)) / N_STATE
    det = float(np.linalg.det(E))
    reduced_det = float(abs(det) ** (1.0 / N_STATE))
    return ErrorPropagation(E, avg_trace, reduced_det)
