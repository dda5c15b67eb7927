"""Discrete dynamics, range-row linearization and observability analysis.

State is the 6-vector [position, velocity] in the world frame.  The range
sensor contributes one linearized row built from a predicted position, the
velocity sensor contributes a 3x3 identity block, so the observation matrix
is always 4x6.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePosition

# Below this predicted distance to the anchor the range row cannot be
# normalized stably and the range channel must be treated as invalid.
EPS_POSITION = 1e-6

_I3 = np.eye(3)


@dataclass
class MeasurementFrame:
    """One timestep's sensor bundle.

    ``accel`` is the world-frame, gravity-compensated acceleration input.
    Absent range or velocity channels are ``None`` and force the matching
    ok-flag to false.
    """

    t: float
    dt: float
    accel: np.ndarray
    uwb_range: float | None = None
    of_velocity: np.ndarray | None = None
    uwb_ok: bool = True
    of_ok: bool = True

    def validate(self) -> None:
        if not self.dt > 0.0:
            raise ValueError(f"frame dt must be positive, got {self.dt}")
        if self.uwb_range is None:
            self.uwb_ok = False
        elif self.uwb_range < 0.0:
            raise ValueError(f"range must be non-negative, got {self.uwb_range}")
        if self.of_velocity is None:
            self.of_ok = False


def build_transition(dt: float, mu: np.ndarray) -> np.ndarray:
    """Transition matrix [[I, dt*I], [0, I - dt*mu]] for drag matrix ``mu``.

    Parameters
    ----------
    dt : float
        Step length in seconds, must be positive.
    mu : (3, 3) ndarray
        Aerial drag matrix (1/s).  ``dt * mu`` must differ from identity,
        otherwise the velocity block degenerates to zero.
    """
    mu = np.asarray(mu, dtype=float)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if mu.shape != (3, 3):
        raise ValueError(f"drag matrix must be 3x3, got {mu.shape}")
    if not np.all(np.isfinite(mu)):
        raise ValueError("drag matrix has non-finite entries")
    if np.array_equal(dt * mu, _I3):
        raise ValueError("dt * mu equals identity; velocity block degenerates")
    A = np.zeros((6, 6))
    A[:3, :3] = _I3
    A[:3, 3:] = dt * _I3
    A[3:, 3:] = _I3 - dt * mu
    return A


def build_input(dt: float, accel: np.ndarray) -> np.ndarray:
    """Net input 6-vector [0.5*dt^2 * a, dt * a] for world-frame acceleration."""
    accel = np.asarray(accel, dtype=float)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if accel.shape != (3,):
        raise ValueError(f"acceleration must be a 3-vector, got {accel.shape}")
    if not np.all(np.isfinite(accel)):
        raise ValueError("acceleration has non-finite entries")
    u = np.empty(6)
    u[:3] = 0.5 * dt * dt * accel
    u[3:] = dt * accel
    return u


def approximate_position(prev_mean: np.ndarray, A: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Position block of the one-step prediction A @ prev_mean + u.

    ``prev_mean`` is the previous window's output state at the preceding
    timestep, so the predicted position is available before the current
    measurement is processed.
    """
    prev_mean = np.asarray(prev_mean, dtype=float)
    return (A[:3, :] @ prev_mean) + u[:3]


def uwb_observation_row(p_tilde: np.ndarray) -> np.ndarray:
    """Linearized range row [p/||p||, 0, 0, 0] for predicted position ``p_tilde``.

    Raises
    ------
    DegeneratePosition
        If the predicted position is within ``EPS_POSITION`` of the anchor;
        the caller must mark the range channel invalid for this step.
    """
    p_tilde = np.asarray(p_tilde, dtype=float)
    norm = float(np.linalg.norm(p_tilde))
    if not norm > EPS_POSITION:
        raise DegeneratePosition(
            f"predicted position norm {norm:.3e} <= {EPS_POSITION:.0e}; "
            "range row cannot be normalized"
        )
    row = np.zeros(6)
    row[:3] = p_tilde / norm
    return row


def build_observation(p_tilde: np.ndarray) -> np.ndarray:
    """4x6 observation matrix: range row stacked over [0 | I] velocity rows."""
    C = np.zeros((4, 6))
    C[0] = uwb_observation_row(p_tilde)
    C[1:, 3:] = _I3
    return C


def observability_rank(A: np.ndarray, C: np.ndarray) -> int:
    """Numerical rank of the stacked observability matrix [C; CA; ...; CA^5].

    Accepts any row count for ``C`` so the coherence-augmented observation
    matrix (with its identity block) can be analyzed with the same routine.
    Rank uses the standard SVD tolerance max(dim) * sigma_max * eps.
    """
    A = np.asarray(A, dtype=float)
    C = np.asarray(C, dtype=float)
    n = A.shape[0]
    blocks = []
    Cp = C
    for _ in range(n):
        blocks.append(Cp)
        Cp = Cp @ A
    O = np.vstack(blocks)
    return int(np.linalg.matrix_rank(O))
