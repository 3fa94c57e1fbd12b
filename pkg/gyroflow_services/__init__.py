"""Gyroscope motion fields, constrained flow fusion and homography fitting."""

from .settings import CONFIG_PATH, LOG_LEVEL, OUTPUT_ROOT  # re-export for convenience

__version__ = "0.1.0"

__all__ = ["CONFIG_PATH", "LOG_LEVEL", "OUTPUT_ROOT", "__version__"]
