from __future__ import annotations

import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from gyroflow_services.core_math import CameraIntrinsics  # noqa: E402
from gyroflow_services.formats.gyro_log import GyroLog  # noqa: E402
from gyroflow_services.gyro_field import row_patch_homographies  # noqa: E402
from gyroflow_services.synth import ForegroundSpec, SynthSequence, SynthSpec, TrajectorySpec  # noqa: E402
from gyroflow_services.types import HomographyArray  # noqa: E402

FRAME_PERIOD_NS = 33_333_333


def constant_rate_log(omega: Sequence[float], end_ns: int, step_ns: int = 1_000_000, start_ns: int = 0) -> GyroLog:
    timestamps = np.arange(start_ns, end_ns + step_ns, step_ns, dtype=np.int64)
    omegas = np.tile(np.asarray(omega, dtype=np.float64), (timestamps.size, 1))
    return GyroLog(timestamps, omegas)


def textured_image(width: int, height: int, seed: int = 0, cell: float = 6.0) -> np.ndarray:
    """Smooth random texture in 0-255 (float), good for gradient-based flow."""
    from scipy import ndimage

    rng = np.random.default_rng(seed)
    noise = rng.random((height, width))
    smooth = ndimage.gaussian_filter(noise, sigma=cell / 3.0, mode="wrap")
    smooth -= smooth.min()
    return 255.0 * smooth / smooth.max()


@pytest.fixture
def intrinsics_600x800() -> CameraIntrinsics:
    return CameraIntrinsics(fx=700.0, fy=700.0, cx=299.5, cy=399.5, width=600, height=800)


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=150.0, fy=150.0, cx=63.5, cy=47.5, width=128, height=96)


@pytest.fixture
def small_spec(small_intrinsics: CameraIntrinsics) -> SynthSpec:
    return SynthSpec(
        intrinsics=small_intrinsics,
        trajectory=TrajectorySpec(axis=(0.2, 1.0, 0.1), rate=0.3),
        frame_count=3,
        texture_cell=8.0,
        seed=7,
    )


@pytest.fixture
def sprite_spec(small_intrinsics: CameraIntrinsics) -> SynthSpec:
    return SynthSpec(
        intrinsics=small_intrinsics,
        trajectory=TrajectorySpec(axis=(0.0, 1.0, 0.0), rate=0.2),
        foreground=ForegroundSpec(x=40.0, y=30.0, width=32, height=24, velocity=(3.0, 1.0)),
        frame_count=2,
        texture_cell=8.0,
        seed=11,
    )


def pair_gyro_array(seq: SynthSequence, index: int = 0) -> HomographyArray:
    """Gyro homography array of consecutive pair ``index`` built from the sequence's own log."""
    spec = seq.spec
    t_a = seq.frame_index.frames[index].timestamp_ns
    t_b = seq.frame_index.frames[index + 1].timestamp_ns
    return row_patch_homographies(
        spec.intrinsics, seq.gyro_log, t_a, t_b, spec.rolling_shutter, frame_period_ns=spec.frame_period_ns
    )


@pytest.fixture
def scene_spec() -> SynthSpec:
    """Rotation plus a moving textured rectangle, large enough for the fusion acceptance checks."""
    return SynthSpec(
        intrinsics=CameraIntrinsics(fx=300.0, fy=300.0, cx=127.5, cy=95.5, width=256, height=192),
        trajectory=TrajectorySpec(axis=(0.1, 1.0, 0.05), rate=0.6),
        foreground=ForegroundSpec(x=96.0, y=72.0, width=64, height=48, velocity=(4.0, 1.0)),
        frame_count=2,
        texture_cell=8.0,
        image_noise=2.0,
        seed=5,
    )
