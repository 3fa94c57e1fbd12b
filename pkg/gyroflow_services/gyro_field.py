"""Gyro fields: per-row-patch rotation homographies rasterised into dense flow.

A rolling-shutter frame exposes row ``y`` at
``anchor + readout_fraction * frame_period * (y / height)``; each row patch is
assigned the exposure time of its centre row. Between patch centres the
camera orientation is interpolated with SLERP, row by row, so the field has no
seams at patch boundaries.
"""

from __future__ import annotations

import logging
from typing import Any, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from .core_math import (
    AxisRemap,
    CameraIntrinsics,
    integrate_gyro,
    quaternions_to_rotations,
    rotations_to_quaternions,
    slerp_batch,
)
from .errors import ArgumentError, DecompositionError, DegenerateProjectionError
from .types import FlowField, HomographyArray, normalize_homography

logger = logging.getLogger(__name__)

DECOMPOSITION_TOLERANCE = 1e-3
PROJECTION_EPSILON = 1e-9


class RollingShutterModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    patch_count: int = Field(default=14, ge=1)
    readout_fraction: float = Field(default=0.8, gt=0.0, le=1.0)
    frame_timestamp_anchor: Literal["start", "center"] = "start"

    def row_offsets_ns(self, rows: np.ndarray, height: int, frame_period_ns: float) -> np.ndarray:
        """Exposure time of each row relative to the frame timestamp, in (fractional) ns."""
        readout = self.readout_fraction * float(frame_period_ns)
        shift = -0.5 * readout if self.frame_timestamp_anchor == "center" else 0.0
        return shift + readout * (np.asarray(rows, dtype=np.float64) / float(height))


def rotation_homography(K: CameraIntrinsics, R: np.ndarray) -> np.ndarray:
    """H = K·R·K⁻¹, scale-normalised."""
    # written as I + K(R - I)K⁻¹ so an identity rotation gives the identity exactly
    delta = K.matrix() @ (np.asarray(R, dtype=np.float64) - np.eye(3)) @ K.inverse()
    return normalize_homography(np.eye(3) + delta)


def row_patch_homographies(
    K: CameraIntrinsics,
    samples: Any,
    t_a: int,
    t_b: int,
    rs: RollingShutterModel,
    remap: AxisRemap | None = None,
    frame_period_ns: Optional[int] = None,
    time_offset_ns: int = 0,
) -> HomographyArray:
    """Rotation homography of every row patch between frames a and b.

    ``frame_period_ns`` defaults to ``t_b - t_a`` (consecutive frames).
    ``time_offset_ns`` is added to both frame timestamps before they are
    compared with gyro timestamps.
    """
    if t_b < t_a:
        raise ArgumentError("frame b precedes frame a", t_a=t_a, t_b=t_b)
    period = float(frame_period_ns if frame_period_ns is not None else t_b - t_a)
    template = HomographyArray(np.tile(np.eye(3), (rs.patch_count, 1, 1)), K.width, K.height)
    offsets = np.rint(rs.row_offsets_ns(template.patch_centers(), K.height, period)).astype(np.int64)

    homographies = np.empty((rs.patch_count, 3, 3), dtype=np.float64)
    for index, offset in enumerate(offsets):
        start = int(t_a) + int(time_offset_ns) + int(offset)
        end = int(t_b) + int(time_offset_ns) + int(offset)
        try:
            rotation = integrate_gyro(samples, start, end, remap)
        except Exception as exc:
            if hasattr(exc, "context"):
                exc.context["patch"] = index
            raise
        homographies[index] = rotation_homography(K, rotation)
    return HomographyArray(homographies, K.width, K.height)


def decompose_rotations(arr: HomographyArray, K: CameraIntrinsics) -> np.ndarray:
    """Recover R_n = K⁻¹·H_n·K (rescaled to unit determinant) for every patch."""
    # I + K⁻¹(H - I)K keeps an identity homography exactly the identity
    stack = np.eye(3)[None] + K.inverse()[None] @ (arr.homographies - np.eye(3)) @ K.matrix()[None]
    det = np.linalg.det(stack)
    rotations = stack / np.cbrt(det)[:, None, None]
    errors = np.max(np.abs(np.transpose(rotations, (0, 2, 1)) @ rotations - np.eye(3)), axis=(1, 2))
    worst = int(np.argmax(errors))
    if not np.all(np.isfinite(errors)) or errors[worst] > DECOMPOSITION_TOLERANCE:
        raise DecompositionError(
            "homography is not a rotation under these intrinsics",
            patch=worst,
            orthonormality_error=float(errors[worst]),
            tolerance=DECOMPOSITION_TOLERANCE,
        )
    return rotations


def is_rotational(arr: HomographyArray, K: Optional[CameraIntrinsics]) -> bool:
    if K is None:
        return False
    try:
        decompose_rotations(arr, K)
    except DecompositionError:
        return False
    return True


def _bracket(centers: np.ndarray, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lower/upper patch index and interpolation weight for each row, clamped at both ends."""
    rows = np.asarray(rows, dtype=np.float64)
    last = centers.size - 1
    lower = np.clip(np.searchsorted(centers, rows, side="right") - 1, 0, last)
    upper = np.minimum(lower + 1, last)
    span = centers[upper] - centers[lower]
    weight = np.where(span > 0, (rows - centers[lower]) / np.where(span > 0, span, 1.0), 0.0)
    return lower, upper, np.clip(weight, 0.0, 1.0)


def slerp_row_homographies(arr: HomographyArray, K: CameraIntrinsics, rows: np.ndarray) -> np.ndarray:
    """Per-row homographies by decompose -> SLERP between bracketing patch centres -> recompose."""
    rotations = decompose_rotations(arr, K)
    quaternions = rotations_to_quaternions(rotations)
    lower, upper, weight = _bracket(arr.patch_centers(), rows)
    blended = quaternions_to_rotations(slerp_batch(quaternions[lower], quaternions[upper], weight))
    delta = K.matrix()[None] @ (blended - np.eye(3)[None]) @ K.inverse()[None]
    return normalize_homography(np.eye(3)[None] + delta)


def blend_row_homographies(arr: HomographyArray, rows: np.ndarray) -> np.ndarray:
    """Linear blend of normalised entries between patch centres (for non-rotational arrays)."""
    lower, upper, weight = _bracket(arr.patch_centers(), rows)
    w = weight[:, None, None]
    return normalize_homography((1.0 - w) * arr.homographies[lower] + w * arr.homographies[upper])


def row_homographies(arr: HomographyArray, K: Optional[CameraIntrinsics], rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if arr.patch_count == 1:
        return np.broadcast_to(arr.homographies[0], (rows.size, 3, 3)).copy()
    if is_rotational(arr, K):
        return slerp_row_homographies(arr, K, rows)  # type: ignore[arg-type]
    logger.debug("homography array is not rotation-only; blending entries between patch centres")
    return blend_row_homographies(arr, rows)


def smooth_homography_array(arr: HomographyArray, K: CameraIntrinsics, row: float) -> np.ndarray:
    """SLERP-smoothed homography for a single image row."""
    return slerp_row_homographies(arr, K, np.array([float(row)]))[0]


def project_rows(Hs: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Apply one homography per row: Hs is (R, 3, 3), xs is (C,), ys is (R,). Returns x', y', w."""
    x = xs[None, :]
    y = ys[:, None]
    px = Hs[:, 0, 0, None] * x + Hs[:, 0, 1, None] * y + Hs[:, 0, 2, None]
    py = Hs[:, 1, 0, None] * x + Hs[:, 1, 1, None] * y + Hs[:, 1, 2, None]
    pw = Hs[:, 2, 0, None] * x + Hs[:, 2, 1, None] * y + Hs[:, 2, 2, None]
    return px, py, pw


def homography_array_to_field(
    arr: HomographyArray,
    K: Optional[CameraIntrinsics],
    width: int,
    height: int,
) -> FlowField:
    """Dense field p' - p with p' = H(row) p for every pixel of frame a."""
    if (arr.width, arr.height) != (width, height):
        raise ArgumentError(
            "homography array was built for a different image size",
            array_size=(arr.width, arr.height),
            requested_size=(width, height),
        )
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    Hs = row_homographies(arr, K, ys)
    px, py, pw = project_rows(Hs, xs, ys)
    degenerate = np.abs(pw) < PROJECTION_EPSILON
    if degenerate.any():
        row, col = (int(i) for i in np.argwhere(degenerate)[0])
        raise DegenerateProjectionError(
            "projective divide by ~0", pixel=(col, row), count=int(degenerate.sum())
        )
    return FlowField(px / pw - xs[None, :], py / pw - ys[:, None])


def _check_factor(factor: int) -> None:
    if factor < 1 or factor & (factor - 1):
        raise ArgumentError("factor must be a positive power of two", factor=factor)


def downscale_field(f: FlowField, factor: int) -> FlowField:
    """Block-average the displacement grids and rescale values to the coarse pixel unit."""
    _check_factor(factor)
    if f.width % factor or f.height % factor:
        raise ArgumentError(
            "factor does not divide the field size", factor=factor, width=f.width, height=f.height
        )
    if factor == 1:
        return f
    h, w = f.height // factor, f.width // factor

    def reduce(grid: np.ndarray) -> np.ndarray:
        return grid.reshape(h, factor, w, factor).mean(axis=(1, 3)) / factor

    return FlowField(reduce(f.u), reduce(f.v))


def upscale_field(f: FlowField, factor: int) -> FlowField:
    """Bilinear upsampling (edge-clamped) with values rescaled to the fine pixel unit."""
    _check_factor(factor)
    if factor == 1:
        return f
    height, width = f.height * factor, f.width * factor
    ys = (np.arange(height, dtype=np.float64) + 0.5) / factor - 0.5
    xs = (np.arange(width, dtype=np.float64) + 0.5) / factor - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    coords = np.stack([grid_y, grid_x])

    def resample(grid: np.ndarray) -> np.ndarray:
        return ndimage.map_coordinates(grid, coords, order=1, mode="nearest") * factor

    return FlowField(resample(f.u), resample(f.v))


def warp_image(img: np.ndarray, f: FlowField, order: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Backward warp: out(p) = img(p + f(p)), bilinear by default.

    ``order`` is the spline order handed to ``map_coordinates`` (3 for cubic).
    Returns the warped image (float64) and a validity mask; samples that land
    outside the image are invalid and set to 0.
    """
    image = np.asarray(img, dtype=np.float64)
    if image.shape[:2] != f.shape:
        raise ArgumentError("image and field dimensions differ", image_shape=image.shape[:2], field_shape=f.shape)
    ys, xs = np.meshgrid(np.arange(f.height, dtype=np.float64), np.arange(f.width, dtype=np.float64), indexing="ij")
    sample_x = xs + f.u
    sample_y = ys + f.v
    valid = (sample_x >= 0) & (sample_x <= f.width - 1) & (sample_y >= 0) & (sample_y <= f.height - 1)
    coords = np.stack([sample_y, sample_x])
    if image.ndim == 2:
        warped = ndimage.map_coordinates(image, coords, order=order, mode="nearest")
    else:
        warped = np.stack(
            [ndimage.map_coordinates(image[..., c], coords, order=order, mode="nearest") for c in range(image.shape[2])],
            axis=-1,
        )
    mask = valid if warped.ndim == 2 else valid[..., None]
    return np.where(mask, warped, 0.0), valid


__all__ = [
    "RollingShutterModel",
    "rotation_homography",
    "row_patch_homographies",
    "decompose_rotations",
    "is_rotational",
    "slerp_row_homographies",
    "blend_row_homographies",
    "row_homographies",
    "smooth_homography_array",
    "project_rows",
    "homography_array_to_field",
    "downscale_field",
    "upscale_field",
    "warp_image",
]
