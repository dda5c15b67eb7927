"""HTTP service wrapping the estimator core."""

from .app import create_app

__all__ = ["create_app"]
