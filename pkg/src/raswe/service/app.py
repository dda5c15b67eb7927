"""FastAPI service wrapping the estimator core.

Sessions hold a live estimator each; clients stream measurement frames
and receive the newest posterior with diagnostics.  One-shot endpoints
cover observability analysis and small simulation batches.
"""

from __future__ import annotations

import threading
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException

from .. import __version__
from ..adaptation import EstimatorConfig
from ..errors import EstimatorError
from ..estimator import SlidingWindowEstimator, StepResult
from ..model import MeasurementFrame, build_observation, build_transition, observability_rank
from ..simulation import SimScenario, batch_means, run_monte_carlo
from .schemas import (
    ConfigModel,
    Diagnostics,
    EstimateResponse,
    FrameRequest,
    HealthResponse,
    ObservabilityRequest,
    ObservabilityResponse,
    RunMetricsModel,
    SessionCreateRequest,
    SessionCreateResponse,
    SessionInfo,
    SimulateRequest,
    SimulateResponse,
)


def config_from_model(m: ConfigModel) -> EstimatorConfig:
    return EstimatorConfig(
        k_w=m.k_w, lambda0=m.lambda0, f1=m.f1, f2=m.f2, epsilon=m.epsilon,
        b_u=m.b_u, b_l=m.b_l,
        mu0=np.diag(m.mu0_diag),
        P0=m.p0 * np.eye(6),
        Phi0=m.phi0_scale * np.eye(6), phi0=m.phi0,
        Psi0=m.psi0_scale * np.eye(4), psi0=m.psi0,
        warmup=m.warmup,
        errprop_off=m.errprop_off, coherence_off=m.coherence_off,
        consistency_off=m.consistency_off, drag_off=m.drag_off,
        adapt_off=m.adapt_off,
    )


class _Session:
    def __init__(self, estimator: SlidingWindowEstimator):
        self.estimator = estimator
        self.lock = threading.Lock()
        self.last_phase = "warmup"


def _estimate_response(r: StepResult) -> EstimateResponse:
    diag = None
    if r.phase == "window":
        w = r.weights
        diag = Diagnostics(
            avg_trace=r.avg_trace, reduced_det=r.reduced_det, step_len=r.step_len,
            w1=w.w1, w2=w.w2, w3=w.w3,
            q_diag=list(map(float, r.q_diag)),
            r_diag=list(map(float, r.r_diag)),
            mu_diag=list(map(float, r.mu_diag)),
        )
    return EstimateResponse(
        k=r.k, t=r.t, phase=r.phase,
        estimate=list(map(float, r.estimate)),
        cov_diag=list(map(float, np.diag(r.cov))),
        diagnostics=diag,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="raswe", version=__version__,
                  description="Single-anchor UAV positioning estimator")
    sessions: dict[str, _Session] = {}
    registry_lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/sessions", response_model=SessionCreateResponse, status_code=201)
    def create_session(req: SessionCreateRequest) -> SessionCreateResponse:
        try:
            cfg = config_from_model(req.config)
            est = SlidingWindowEstimator(cfg, np.array(req.x0), t0=req.t0)
        except (ValueError, EstimatorError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        sid = uuid.uuid4().hex
        with registry_lock:
            sessions[sid] = _Session(est)
        return SessionCreateResponse(session_id=sid)

    def _get(sid: str) -> _Session:
        with registry_lock:
            sess = sessions.get(sid)
        if sess is None:
            raise HTTPException(status_code=404, detail=f"no session {sid}")
        return sess

    @app.post("/sessions/{sid}/frames", response_model=EstimateResponse)
    def push_frame(sid: str, req: FrameRequest) -> EstimateResponse:
        sess = _get(sid)
        with sess.lock:
            est = sess.estimator
            dt = req.dt if req.dt is not None else req.t - est.t
            if not dt > 0.0:
                raise HTTPException(status_code=400,
                                    detail=f"non-increasing time: t={req.t} after {est.t}")
            frame = MeasurementFrame(
                t=req.t, dt=dt, accel=np.array(req.accel),
                uwb_range=req.uwb_range,
                of_velocity=None if req.of_velocity is None else np.array(req.of_velocity),
                uwb_ok=req.uwb_ok, of_ok=req.of_ok,
            )
            try:
                result = est.step(frame)
            except EstimatorError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            sess.last_phase = result.phase
        return _estimate_response(result)

    @app.get("/sessions/{sid}", response_model=SessionInfo)
    def session_info(sid: str) -> SessionInfo:
        sess = _get(sid)
        with sess.lock:
            est = sess.estimator
            from ..adaptation import expected_covariances
            Q, R_bar = expected_covariances(est.belief)
            return SessionInfo(
                session_id=sid, steps=est.k, t=est.t, phase=sess.last_phase,
                mu_diag=list(map(float, np.diag(est.mu))),
                q_diag=list(map(float, np.diag(Q))),
                r_diag=list(map(float, np.diag(R_bar))),
            )

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str) -> None:
        with registry_lock:
            if sid not in sessions:
                raise HTTPException(status_code=404, detail=f"no session {sid}")
            del sessions[sid]

    @app.post("/observability", response_model=ObservabilityResponse)
    def observability(req: ObservabilityRequest) -> ObservabilityResponse:
        try:
            A = build_transition(req.dt, np.diag(req.drag_diag))
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        degenerate = False
        try:
            C = build_observation(np.array(req.position))
        except EstimatorError:
            degenerate = True
            C = np.zeros((4, 6))
            C[1:, 3:] = np.eye(3)
        raw = observability_rank(A, C)
        aug = observability_rank(A, np.vstack([C, np.eye(6)]))
        return ObservabilityResponse(
            raw_rank=raw, raw_observable=raw == 6,
            augmented_rank=aug, augmented_observable=aug == 6,
            degenerate_position=degenerate,
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest) -> SimulateResponse:
        cfg = config_from_model(req.config)
        scenario = SimScenario(steps=req.steps, seed=req.seed, warmup=cfg.warmup)
        metrics = run_monte_carlo(scenario, req.runs, cfg, truth_init=req.truth_init)
        runs = [RunMetricsModel(
            seed=m.seed, rmse_pos=float(m.rmse_pos),
            rmse_axes=[float(v) for v in np.atleast_1d(m.rmse_axes)],
            kld_q_diag=float(m.kld_q_diag), kld_q_full=float(m.kld_q_full),
            kld_r_diag=float(m.kld_r_diag), kld_r_full=float(m.kld_r_full),
            drag_rel_rmse_pct=float(m.drag_rel_rmse_pct),
            failed=m.failed, error=m.error,
        ) for m in metrics]
        return SimulateResponse(runs=runs, means=batch_means(metrics))

    return app
