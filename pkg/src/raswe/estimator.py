"""Top-level sliding-window estimator.

Each incoming frame advances the estimator one timestep.  The first
``warmup`` steps run a plain Kalman filter whose posteriors seed the
window buffers; afterwards every step re-evaluates the trailing window:
build the model matrices, run the augmented forward filter, assess the
error propagation, smooth backward, update the noise belief and adjust
the drag matrix.  The newest smoothed state is the step's estimate.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .adaptation import (
    EstimatorConfig,
    GateWeights,
    NoiseBelief,
    SensorStatus,
    apply_sensor_status,
    drag_gradient,
    expected_covariances,
    gate_weights,
    iw_auxiliary,
    iw_update,
    step_length,
)
from .errors import InnovationNotPD
from .model import EPS_POSITION, MeasurementFrame, build_input, build_transition
from .window import (
    StateBelief,
    WindowBuffer,
    backward_smooth,
    error_propagation,
    forward_filter,
    _sym,
)

# fixed observation-matrix skeleton: range row filled per step, velocity
# rows constant
_C_TEMPLATE = np.zeros((4, 6))
_C_TEMPLATE[1:, 3:] = np.eye(3)


@dataclass
class StepResult:
    """Per-step estimator output with diagnostics."""

    k: int
    t: float
    estimate: np.ndarray          # newest posterior state
    cov: np.ndarray               # newest posterior covariance
    phase: str                    # "warmup" or "window"
    smoothed_means: list | None = None
    avg_trace: float = 0.0
    reduced_det: float = 0.0
    step_len: float = 0.0
    weights: GateWeights | None = None
    q_diag: np.ndarray | None = None
    r_diag: np.ndarray | None = None
    mu_diag: np.ndarray | None = None
    q_full: np.ndarray | None = None   # expected process covariance after the step
    r_full: np.ndarray | None = None   # expected base observation covariance


class SlidingWindowEstimator:
    """Sequential state machine consuming measurement frames.

    One instance is strictly sequential; independent instances may run
    concurrently.
    """

    def __init__(self, cfg: EstimatorConfig, x0: np.ndarray, t0: float = 0.0):
        cfg.validate()
        self.cfg = cfg
        self.k = 0
        self.t = t0
        self.belief: NoiseBelief = cfg.initial_belief()
        self.mu = np.array(cfg.mu0, dtype=float)
        self.x = np.array(x0, dtype=float)
        self.P = np.array(cfg.P0, dtype=float)
        StateBelief(self.x, self.P).validate()

        k_w = cfg.k_w
        self._post_means: deque = deque(maxlen=k_w)   # posteriors at the last k_w steps
        self._post_covs: deque = deque(maxlen=k_w)
        self._frames: deque = deque(maxlen=k_w - 1)   # (dt, u, y, accel, status)
        self._q_hist: deque = deque(maxlen=k_w)       # per-step Q, for consistency_off
        self._r_hist: deque = deque(maxlen=k_w)       # per-step base R, same
        self._last_y = np.zeros(4)                    # hold-last fill for absent channels

    # -- frame pre-processing -------------------------------------------------

    def _fill_measurement(self, frame: MeasurementFrame):
        """Assemble the 4-vector measurement, holding the last value for
        absent channels, and the step's sensor status."""
        y = self._last_y.copy()
        uwb_ok = frame.uwb_ok and frame.uwb_range is not None
        of_ok = frame.of_ok and frame.of_velocity is not None
        if frame.uwb_range is not None:
            y[0] = frame.uwb_range
        if frame.of_velocity is not None:
            y[1:] = frame.of_velocity
        self._last_y = y
        status = SensorStatus(uwb_ok, of_ok, self.cfg.epsilon)
        return y, status

    def _observation(self, p_prev: np.ndarray, A: np.ndarray, u: np.ndarray,
                     status: SensorStatus):
        """Observation matrix from the predicted position; a degenerate
        prediction (at the anchor) zeroes the range row and invalidates
        the range channel for this step."""
        p_tilde = (A[:3, :] @ p_prev) + u[:3]
        C = _C_TEMPLATE.copy()
        norm = float(np.sqrt(p_tilde @ p_tilde))
        if norm > EPS_POSITION:
            C[0, :3] = p_tilde / norm
        else:
            status = SensorStatus(False, status.of_ok, status.epsilon)
        return C, status

    # -- stepping ---------------------------------------------------------------

    def step(self, frame: MeasurementFrame) -> StepResult:
        frame.validate()
        self.k += 1
        self.t = frame.t
        if self.k <= self.cfg.warmup:
            return self._warmup_step(frame)
        return self._window_step(frame)

    def _warmup_step(self, frame: MeasurementFrame) -> StepResult:
        dt = frame.dt
        A = build_transition(dt, self.mu)
        u = build_input(dt, frame.accel)
        y, status = self._fill_measurement(frame)
        Q, R_bar = expected_covariances(self.belief)
        C, status = self._observation(self.x, A, u, status)
        R = apply_sensor_status(R_bar, status)

        x_pred = A @ self.x + u
        P_pred = A @ self.P @ A.T + Q
        CP = C @ P_pred
        S = _sym(CP @ C.T + R)
        try:
            np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise InnovationNotPD(f"innovation covariance not PD at warm-up step "
                                  f"{self.k}") from exc
        K = np.linalg.solve(S, CP).T
        self.x = x_pred + K @ (y - C @ x_pred)
        self.P = _sym(P_pred - K @ CP)

        self._post_means.append(self.x.copy())
        self._post_covs.append(self.P.copy())
        self._frames.append((dt, u, y, np.array(frame.accel, dtype=float), status))
        self._q_hist.append(Q)
        self._r_hist.append(R_bar)

        return StepResult(self.k, frame.t, self.x.copy(), self.P.copy(), "warmup",
                          q_diag=np.diag(Q).copy(), r_diag=np.diag(R_bar).copy(),
                          mu_diag=np.diag(self.mu).copy(), q_full=Q, r_full=R_bar)

    def _window_step(self, frame: MeasurementFrame) -> StepResult:
        cfg = self.cfg
        k_w = cfg.k_w
        dt = frame.dt
        u_new = build_input(dt, frame.accel)
        y_new, status_new = self._fill_measurement(frame)

        Q, R_bar = expected_covariances(self.belief)

        prior_means = list(self._post_means)
        prior_covs = list(self._post_covs)
        steps = list(self._frames)
        steps.append((dt, u_new, y_new, np.array(frame.accel, dtype=float), status_new))

        # model matrices for the window; the transition is rebuilt with the
        # current drag estimate, the observation is re-linearized around the
        # previous window's outputs
        A_list, C_list, R_list, u_list, y_list = [], [], [], [], []
        statuses = []
        A_cache_dt, A_cache = None, None
        for j in range(1, k_w + 1):
            dt_j, u_j, y_j, _accel_j, status_j = steps[j - 1]
            if dt_j != A_cache_dt:
                A_cache = build_transition(dt_j, self.mu)
                A_cache_dt = dt_j
            A_j = A_cache
            C_j, status_j = self._observation(prior_means[j - 1], A_j, u_j, status_j)
            if cfg.consistency_off:
                base_R = self._r_hist[j - 1]
            else:
                base_R = R_bar
            R_list.append(apply_sensor_status(base_R, status_j))
            A_list.append(A_j)
            C_list.append(C_j)
            u_list.append(u_j)
            y_list.append(y_j)
            statuses.append(status_j)

        # Consistency: one Q, one base R and one augmentation-block covariance
        # serve the whole window, and the window-start covariance is reset to
        # P0, so the pseudo-measurement weight never compounds across the
        # overlapping windows.  With the restriction cancelled, the recorded
        # per-step covariances are used everywhere instead.
        aug_covs = prior_covs
        if cfg.consistency_off:
            init_cov = prior_covs[0]
        else:
            init_cov = cfg.P0
        buffer = WindowBuffer(
            k_w=k_w,
            prior_means=prior_means,
            prior_covs=aug_covs,
            A=A_list,
            inputs=u_list,
            measurements=y_list,
            C=C_list,
            Q=Q,
            meas_covs=R_list,
            augmented=not cfg.coherence_off,
        )
        if cfg.consistency_off:
            buffer.Q_steps = list(self._q_hist)
        init = StateBelief(prior_means[0], np.array(init_cov, dtype=float))

        fp = forward_filter(buffer, init)
        ep = error_propagation(fp, buffer)
        sw = backward_smooth(fp, buffer)
        w = gate_weights(ep, cfg)

        if not cfg.adapt_off:
            phi_aux, psi_aux = iw_auxiliary(sw, buffer)
            self.belief = iw_update(self.belief, phi_aux, psi_aux, w, k_w)
        Q_next, R_bar_next = expected_covariances(self.belief)
        R_next = apply_sensor_status(R_bar_next, status_new)

        ell = 0.0
        if not cfg.drag_off:
            ell = step_length(Q_next, R_next, cfg)
            if ell > 0.0:
                for j in range(1, k_w + 1):
                    dt_j, _u_j, _y_j, accel_j, _s = steps[j - 1]
                    grad = drag_gradient(sw.means[j - 1][3:], sw.means[j][3:],
                                         accel_j, self.mu, dt_j)
                    self.mu = self.mu - ell * grad

        # roll buffers: the smoothed states at steps 1..k_w become the next
        # window's priors
        self._post_means.clear()
        self._post_means.extend(sw.means[1:])
        self._post_covs.clear()
        self._post_covs.extend(sw.covs[1:])
        self._frames.append(steps[-1])
        self._q_hist.append(Q_next)
        self._r_hist.append(R_bar_next)

        est = sw.means[k_w]
        cov = sw.covs[k_w]
        self.x = est.copy()
        self.P = cov.copy()

        return StepResult(
            self.k, frame.t, est.copy(), cov.copy(), "window",
            smoothed_means=sw.means,
            avg_trace=ep.avg_trace, reduced_det=ep.reduced_det,
            step_len=ell, weights=w,
            q_diag=np.diag(Q_next).copy(), r_diag=np.diag(R_bar_next).copy(),
            mu_diag=np.diag(self.mu).copy(), q_full=Q_next, r_full=R_bar_next,
        )

    def run(self, frames) -> list:
        """Convenience: step through an iterable of frames."""
        return [self.step(f) for f in frames]
