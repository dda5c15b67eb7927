"""Noise-covariance adaptation, gating and aerial drag estimation.

Process and observation covariances are modeled with inverse-Wishart
beliefs.  Each window contributes residual scatter to the scale matrices;
the contribution is gated by two scalars derived from the window's
error-propagation matrix so that unreliable windows never corrupt the
belief.  The drag matrix is adjusted by gradient descent on the squared
gap between the smoothed velocity and its one-step dynamics prediction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDoF
from .window import ErrorPropagation, SmoothedWindow, WindowBuffer, _sym

log = logging.getLogger(__name__)

N_STATE = 6
N_MEAS = 4


@dataclass
class NoiseBelief:
    """Inverse-Wishart parameters for process and observation covariances."""

    phi: float                  # process DoF, must stay > 7
    Phi: np.ndarray             # 6x6 process scale
    psi: float                  # observation DoF, must stay > 5
    Psi: np.ndarray             # 4x4 observation scale

    def validate(self) -> None:
        if not self.phi > N_STATE + 1:
            raise DegenerateDoF(f"process DoF {self.phi} <= {N_STATE + 1}")
        if not self.psi > N_MEAS + 1:
            raise DegenerateDoF(f"observation DoF {self.psi} <= {N_MEAS + 1}")


@dataclass
class GateWeights:
    w1: float
    w2: float
    w3: float


@dataclass
class SensorStatus:
    """Per-step sensor health; a dead sensor gets its noise inflated by epsilon."""

    uwb_ok: bool = True
    of_ok: bool = True
    epsilon: float = 1e3


@dataclass
class EstimatorConfig:
    """Tunables and initial values for the sliding-window estimator."""

    k_w: int = 10
    lambda0: float = 1e-3
    f1: float = 1e-2
    f2: float = 0.1
    epsilon: float = 1e3
    b_u: float = 1e-2
    b_l: float = 1e-3
    mu0: np.ndarray = field(default_factory=lambda: np.diag([0.2, 0.2, 0.8]))
    P0: np.ndarray = field(default_factory=lambda: 0.1 * np.eye(6))
    Phi0: np.ndarray = field(default_factory=lambda: 17.0 * np.eye(6))
    phi0: float = 10.0
    Psi0: np.ndarray = field(default_factory=lambda: 13.0 * np.eye(4))
    psi0: float = 8.0
    warmup: int = 20
    # ablation switches
    errprop_off: bool = False
    coherence_off: bool = False
    consistency_off: bool = False
    drag_off: bool = False
    adapt_off: bool = False      # freeze the noise belief entirely (baseline mode)

    def validate(self) -> None:
        if self.k_w < 2:
            raise ValueError("window length must be at least 2")
        if not (0.0 < self.b_l < self.b_u):
            raise ValueError(f"need 0 < b_l < b_u, got b_l={self.b_l} b_u={self.b_u}")
        if not (0.0 < self.f1 < 1.0 and 0.0 < self.f2 < 1.0):
            raise ValueError("f1 and f2 must lie in (0, 1)")
        if not (0.0 < self.lambda0 <= 1.0):
            raise ValueError("lambda0 must lie in (0, 1]")
        if self.warmup < self.k_w:
            raise ValueError("warm-up must cover at least one window length")

    def initial_belief(self) -> NoiseBelief:
        belief = NoiseBelief(self.phi0, np.array(self.Phi0, dtype=float),
                             self.psi0, np.array(self.Psi0, dtype=float))
        belief.validate()
        return belief


def baseline_config(**overrides) -> EstimatorConfig:
    """Config for the non-adaptive baseline: frozen covariances and drag."""
    cfg = EstimatorConfig(**overrides)
    cfg.adapt_off = True
    cfg.drag_off = True
    return cfg


def gate_weights(ep: ErrorPropagation, cfg: EstimatorConfig) -> GateWeights:
    """Blend weights for the inverse-Wishart update, gated by estimation health.

    With the gate ablated all three weights are forced to one.  The average
    trace is clamped to [0, lambda0] inside the formulas so the weights stay
    in the unit interval; the discount w3 is capped at one (no amplification).
    """
    if cfg.errprop_off:
        return GateWeights(1.0, 1.0, 1.0)
    lam = ep.avg_trace
    if lam >= cfg.lambda0:
        w1, w2 = 1.0, 0.0
    else:
        lam_c = min(max(lam, 0.0), cfg.lambda0)
        w1 = 1.0 - cfg.f1 * lam_c
        w2 = 1.0 - cfg.f1 + cfg.f1 * lam_c
    w3 = cfg.f2 + ep.reduced_det / cfg.f2
    if w3 > 1.0:
        log.debug("w3=%.4f exceeds 1, clamping (reduced_det=%.3e)", w3, ep.reduced_det)
        w3 = 1.0
    return GateWeights(w1, w2, w3)


def iw_auxiliary(sw: SmoothedWindow, buffer: WindowBuffer):
    """Per-step scatter matrices feeding the inverse-Wishart scale updates.

    Residuals use the raw (un-augmented) measurements and observation
    matrices.  The process-side matrix mixes smoother cross terms that are
    not mutual transposes as combined here, so it is symmetrized.
    """
    k_w = buffer.k_w
    A = np.stack(buffer.A)                       # (k_w, 6, 6)
    G = np.stack(sw.gains)
    P = np.stack(sw.covs)                        # (k_w+1, 6, 6)
    X = np.stack(sw.means)                       # (k_w+1, 6)
    U = np.stack(buffer.inputs)
    C = np.stack(buffer.C)                       # (k_w, 4, 6)
    Y = np.stack(buffer.measurements)

    e1 = X[1:] - (A @ X[:-1, :, None])[:, :, 0] - U
    GP = G @ P[1:]
    At = A.transpose(0, 2, 1)
    Phi = P[1:] - A @ GP - GP @ At + A @ P[:-1] @ At + e1[:, :, None] * e1[:, None, :]
    Phi = 0.5 * (Phi + Phi.transpose(0, 2, 1))

    e2 = Y - (C @ X[1:, :, None])[:, :, 0]
    Psi = C @ P[1:] @ C.transpose(0, 2, 1) + e2[:, :, None] * e2[:, None, :]

    return [Phi[j] for j in range(k_w)], [Psi[j] for j in range(k_w)]


def discounted_sample_mass(w3: float, k_w: int) -> float:
    """Total weight the discounted accumulation assigns to its samples.

    The running accumulation acc <- w3 (acc + M) over k_w terms weighs term
    j by w3^(k_w - j + 1); this is the sum of those weights.  It is the
    sample count the observation DoF may grow by: pairing the DoF increment
    with the actual scale mass keeps the inverse-Wishart expectation
    calibrated (a DoF increment of k_w against a discounted scale sum would
    shrink the expected covariance toward zero window after window).
    """
    if w3 >= 1.0:
        return float(k_w)
    return w3 * (1.0 - w3 ** k_w) / (1.0 - w3)


def iw_update(belief: NoiseBelief, phi_aux: list, psi_aux: list,
              w: GateWeights, k_w: int) -> NoiseBelief:
    """Posterior inverse-Wishart parameters after one window.

    The process scale takes the plain sum of its auxiliary matrices and its
    DoF grows by the window length; the observation scale takes the
    w3-discounted running accumulation and its DoF grows by the matching
    discounted sample mass.  The process scale is floored to PSD (tiny
    negative eigenvalues from the indefinite cross terms are clipped).
    """
    n1 = N_STATE + 1
    m1 = N_MEAS + 1
    phi_new = w.w1 * (belief.phi - n1) + n1 + w.w2 * k_w
    psi_new = w.w1 * (belief.psi - m1) + m1 + w.w2 * discounted_sample_mass(w.w3, k_w)

    Phi_sum = np.zeros((N_STATE, N_STATE))
    for M in phi_aux:
        Phi_sum += M
    acc = np.zeros((N_MEAS, N_MEAS))
    for M in psi_aux:
        acc = w.w3 * (acc + M)

    Phi_new = w.w1 * belief.Phi + w.w2 * Phi_sum
    Psi_new = w.w1 * belief.Psi + w.w2 * acc

    Phi_new = _psd_floor(_sym(Phi_new))
    Psi_new = _sym(Psi_new)

    out = NoiseBelief(phi_new, Phi_new, psi_new, Psi_new)
    out.validate()
    return out


def _psd_floor(M: np.ndarray) -> np.ndarray:
    try:
        np.linalg.cholesky(M)       # strictly PD: nothing to clip
        return M
    except np.linalg.LinAlgError:
        eigs, vecs = np.linalg.eigh(M)
        return (vecs * np.maximum(eigs, 0.0)) @ vecs.T


def expected_covariances(belief: NoiseBelief):
    """Mean process and observation covariances implied by the belief."""
    belief.validate()
    Q = belief.Phi / (belief.phi - N_STATE - 1)
    R_bar = belief.Psi / (belief.psi - N_MEAS - 1)
    return Q, R_bar


def apply_sensor_status(R_bar: np.ndarray, status: SensorStatus) -> np.ndarray:
    """Congruence S R S with S = diag(s_uwb, s_of * I3); dead sensors get epsilon."""
    if status.uwb_ok and status.of_ok:
        return R_bar
    s = np.ones(N_MEAS)
    if not status.uwb_ok:
        s[0] = status.epsilon
    if not status.of_ok:
        s[1:] = status.epsilon
    return R_bar * (s[:, None] * s[None, :])


def drag_gradient(v_prev: np.ndarray, v_curr: np.ndarray, accel: np.ndarray,
                  mu: np.ndarray, dt: float) -> np.ndarray:
    """Gradient of the squared velocity-prediction gap w.r.t. the drag matrix."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    resid = v_curr - v_prev + dt * (mu @ v_prev) - dt * accel
    return (2.0 * dt) * (resid[:, None] * v_prev)


def step_length(Q: np.ndarray, R: np.ndarray, cfg: EstimatorConfig) -> float:
    """Drag-descent step length from the covariance determinants.

    The sensors must be collectively more trustworthy than the dynamics
    (root-determinant of R below that of Q) for any adjustment to happen;
    degenerate determinants disable the step.
    """
    det_q = float(np.linalg.det(Q))
    det_r = float(np.linalg.det(R))
    if not np.isfinite(det_q) or not np.isfinite(det_r) or det_q <= 0.0 or det_r < 0.0:
        return 0.0
    q = abs(det_q) ** (1.0 / N_STATE)
    r = abs(det_r) ** (1.0 / N_MEAS)
    if q <= r:
        return 0.0
    return cfg.b_u - (cfg.b_u - cfg.b_l) * r / q
