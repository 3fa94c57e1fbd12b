#!/usr/bin/env python3
"""Time gyro-field rasterisation at a base resolution and at twice that resolution.

The per-pixel work is constant, so doubling both dimensions should cost at
most about four times as much.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict

import numpy as np

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from gyroflow_services.core_math import CameraIntrinsics, GyroSample  # noqa: E402
from gyroflow_services.gyro_field import (  # noqa: E402
    RollingShutterModel,
    homography_array_to_field,
    row_patch_homographies,
)

FRAME_PERIOD_NS = 33_333_333


def constant_rate_log(rate: np.ndarray, end_ns: int, step_ns: int = 2_500_000) -> list[GyroSample]:
    return [GyroSample(tuple(float(c) for c in rate), int(t)) for t in range(0, end_ns + step_ns, step_ns)]


def time_rasterisation(width: int, height: int, patches: int, repeats: int) -> Dict[str, Any]:
    K = CameraIntrinsics(fx=0.875 * height, fy=0.875 * height, cx=(width - 1) / 2, cy=(height - 1) / 2, width=width, height=height)
    samples = constant_rate_log(np.array([0.1, -0.2, 0.3]), 4 * FRAME_PERIOD_NS)
    array = row_patch_homographies(K, samples, FRAME_PERIOD_NS, 2 * FRAME_PERIOD_NS, RollingShutterModel(patch_count=patches))
    timings = []
    for _ in range(repeats):
        start = time.perf_counter()
        homography_array_to_field(array, K, width, height)
        timings.append(time.perf_counter() - start)
    return {"width": width, "height": height, "best_s": min(timings), "median_s": float(np.median(timings))}


def main() -> None:
    parser = argparse.ArgumentParser(description="Benchmark gyro-field rasterisation scaling.")
    parser.add_argument("--width", type=int, default=600)
    parser.add_argument("--height", type=int, default=800)
    parser.add_argument("--patches", type=int, default=14)
    parser.add_argument(
        "--repeats",
        type=int,
        default=5,
        help="Timed runs per resolution; the best run is compared (default: 5).",
    )
    args = parser.parse_args()

    base = time_rasterisation(args.width, args.height, args.patches, args.repeats)
    double = time_rasterisation(2 * args.width, 2 * args.height, args.patches, args.repeats)
    ratio = double["best_s"] / base["best_s"] if base["best_s"] > 0 else float("inf")
    print(json.dumps({"base": base, "double": double, "ratio": ratio, "within_bound": ratio <= 4.5}, indent=2))


if __name__ == "__main__":
    main()
