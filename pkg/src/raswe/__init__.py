"""Single-anchor UAV positioning with a restricted adaptive sliding window
estimator: joint estimation of position/velocity states, process and
observation noise covariances, and the aerial drag matrix."""

from .adaptation import EstimatorConfig, NoiseBelief, SensorStatus, baseline_config
from .estimator import SlidingWindowEstimator, StepResult
from .model import MeasurementFrame
from .simulation import SimScenario, run_monte_carlo, run_simulation, simulate_truth
from .window import StateBelief

__version__ = "0.1.0"

__all__ = [
    "EstimatorConfig",
    "MeasurementFrame",
    "NoiseBelief",
    "SensorStatus",
    "SimScenario",
    "SlidingWindowEstimator",
    "StateBelief",
    "StepResult",
    "baseline_config",
    "run_monte_carlo",
    "run_simulation",
    "simulate_truth",
    "__version__",
]
