"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class ConfigModel(BaseModel):
    """Estimator tunables; matrix parameters as diagonals."""

    k_w: int = 10
    lambda0: float = 1e-3
    f1: float = 1e-2
    f2: float = 0.1
    epsilon: float = 1e3
    b_u: float = 1e-2
    b_l: float = 1e-3
    mu0_diag: list[float] = Field(default=[0.2, 0.2, 0.8], min_length=3, max_length=3)
    p0: float = 0.1
    phi0: float = 10.0
    phi0_scale: float = 17.0
    psi0: float = 8.0
    psi0_scale: float = 13.0
    warmup: int = 20
    errprop_off: bool = False
    coherence_off: bool = False
    consistency_off: bool = False
    drag_off: bool = False
    adapt_off: bool = False


class SessionCreateRequest(BaseModel):
    x0: list[float] = Field(min_length=6, max_length=6)
    t0: float = 0.0
    config: ConfigModel = Field(default_factory=ConfigModel)


class SessionCreateResponse(BaseModel):
    session_id: str


class FrameRequest(BaseModel):
    t: float
    dt: float | None = None          # inferred from the previous frame if omitted
    accel: list[float] = Field(min_length=3, max_length=3)
    uwb_range: float | None = None
    of_velocity: list[float] | None = Field(default=None, min_length=3, max_length=3)
    uwb_ok: bool = True
    of_ok: bool = True


class Diagnostics(BaseModel):
    avg_trace: float
    reduced_det: float
    step_len: float
    w1: float
    w2: float
    w3: float
    q_diag: list[float]
    r_diag: list[float]
    mu_diag: list[float]


class EstimateResponse(BaseModel):
    k: int
    t: float
    phase: str
    estimate: list[float]
    cov_diag: list[float]
    diagnostics: Diagnostics | None = None


class SessionInfo(BaseModel):
    session_id: str
    steps: int
    t: float
    phase: str
    mu_diag: list[float]
    q_diag: list[float]
    r_diag: list[float]


class ObservabilityRequest(BaseModel):
    position: list[float] = Field(min_length=3, max_length=3)
    dt: float = 0.04
    drag_diag: list[float] = Field(default=[0.2, 0.2, 0.8], min_length=3, max_length=3)


class ObservabilityResponse(BaseModel):
    raw_rank: int
    raw_observable: bool
    augmented_rank: int
    augmented_observable: bool
    degenerate_position: bool


class SimulateRequest(BaseModel):
    runs: int = Field(default=1, ge=1, le=20)
    steps: int = Field(default=500, ge=50, le=5000)
    seed: int = 0
    config: ConfigModel = Field(default_factory=ConfigModel)
    truth_init: bool = True


class RunMetricsModel(BaseModel):
    seed: int
    rmse_pos: float
    rmse_axes: list[float]
    kld_q_diag: float
    kld_q_full: float
    kld_r_diag: float
    kld_r_full: float
    drag_rel_rmse_pct: float
    failed: bool = False
    error: str = ""


class SimulateResponse(BaseModel):
    runs: list[RunMetricsModel]
    means: dict


class HealthResponse(BaseModel):
    status: str
    version: str
