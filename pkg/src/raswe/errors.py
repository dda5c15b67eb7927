"""Exception types shared across the estimator."""


class EstimatorError(Exception):
    """Base class for all estimator errors."""


class DegeneratePosition(EstimatorError):
    """Predicted position is too close to the anchor to normalize the range row."""


class InnovationNotPD(EstimatorError):
    """Innovation covariance failed a positive-definite factorization."""


class DegenerateDoF(EstimatorError):
    """Inverse-Wishart degrees of freedom too small for a defined expectation."""


class ConfigError(EstimatorError):
    """Invalid or malformed configuration."""


class LogFormatError(EstimatorError):
    """Malformed sensor log input."""
