"""Configuration helpers for the gyro-flow fusion tools."""

from __future__ import annotations

import os
from pathlib import Path

CONFIG_PATH = Path(os.environ.get("GYROFLOW_CONFIG", "project_config.yaml"))
OUTPUT_ROOT = Path(os.environ.get("GYROFLOW_OUT_DIR", "runs"))
LOG_LEVEL = os.environ.get("GYROFLOW_LOG_LEVEL", "INFO")

__all__ = ["CONFIG_PATH", "OUTPUT_ROOT", "LOG_LEVEL"]
