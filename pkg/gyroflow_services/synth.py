"""Synthetic scenes with exact ground truth.

The background is a procedural value-noise texture on a plane seen by a
rolling-shutter camera. The camera rotates about a fixed axis with rate
``rate + amplitude * sin(2π f t)`` and may translate; a textured sprite can
move across the screen at a constant velocity in pixels per frame.

Row ``y`` of frame ``k`` is exposed at ``t_k + offset(y)``. A texture point
``s`` (pixels of the reference view at t = 0) appears at ``H(t)·s`` with
``H(t) = K·O(t)·(I − C(t)·nᵀ/d)·K⁻¹``, where ``O(t)`` is the camera
orientation and ``C(t)`` its position. Ground-truth flow pairs each pixel of
frame a with the same row's exposure time in frame b, which is the motion
model a gyro field approximates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from .config import ProjectConfig, dump_yaml, read_yaml_file, save_config, validate_model
from .core_math import NS_PER_S, CameraIntrinsics, rodrigues_batch
from .formats.correspondences import write_correspondences
from .formats.flo import save_flo
from .formats.frames import FrameIndex, FrameRecord, write_frame_index
from .formats.gyro_log import GyroLog, write_gyro_log
from .formats.homography import write_homography_array
from .formats.images import save_image
from .gyro_field import RollingShutterModel, project_rows
from .types import Correspondence, FlowField, HomographyArray, normalize_homography

logger = logging.getLogger(__name__)

Vector3 = Tuple[float, float, float]


class TrajectorySpec(BaseModel):
    """Rotation about a fixed unit axis: ω(t) = axis · (rate + amplitude·sin(2π·frequency·t))."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    axis: Vector3 = (0.0, 0.0, 1.0)
    rate: float = 0.0
    amplitude: float = 0.0
    frequency: float = Field(default=0.0, ge=0.0)

    @field_validator("axis")
    @classmethod
    def _unit(cls, value: Vector3) -> Vector3:
        norm = math.sqrt(sum(c * c for c in value))
        if not norm > 0:
            raise ValueError("rotation axis must be non-zero")
        return (value[0] / norm, value[1] / norm, value[2] / norm)

    def rate_at(self, t: np.ndarray) -> np.ndarray:
        return self.rate + self.amplitude * np.sin(2 * np.pi * self.frequency * np.asarray(t, dtype=np.float64))

    def angle_at(self, t: np.ndarray) -> np.ndarray:
        """Closed-form integral of the rate from 0 to t (seconds)."""
        t = np.asarray(t, dtype=np.float64)
        angle = self.rate * t
        if self.frequency > 0 and self.amplitude:
            omega = 2 * np.pi * self.frequency
            angle = angle + self.amplitude / omega * (1.0 - np.cos(omega * t))
        return angle

    def orientation(self, t: np.ndarray) -> np.ndarray:
        """(N, 3, 3) camera orientations O(t), with O(0) = I."""
        angles = np.atleast_1d(self.angle_at(t))
        return rodrigues_batch(angles[:, None] * np.asarray(self.axis)[None, :])


class TranslationSpec(BaseModel):
    """Camera translation at constant velocity in front of a plane n·X = depth (reference frame)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    velocity: Vector3 = (0.0, 0.0, 0.0)
    plane_depth: float = Field(default=5.0, gt=0.0)
    plane_normal: Vector3 = (0.0, 0.0, 1.0)

    @field_validator("plane_normal")
    @classmethod
    def _unit(cls, value: Vector3) -> Vector3:
        norm = math.sqrt(sum(c * c for c in value))
        if not norm > 0:
            raise ValueError("plane normal must be non-zero")
        return (value[0] / norm, value[1] / norm, value[2] / norm)


class ForegroundSpec(BaseModel):
    """Screen-space textured rectangle; (x, y) is its top-left corner in frame 0."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    x: float
    y: float
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    velocity: Tuple[float, float] = (4.0, 0.0)
    texture_seed: int = 1


class SynthSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    intrinsics: CameraIntrinsics
    rolling_shutter: RollingShutterModel = Field(default_factory=RollingShutterModel)
    trajectory: TrajectorySpec = Field(default_factory=TrajectorySpec)
    translation: Optional[TranslationSpec] = None
    foreground: Optional[ForegroundSpec] = None
    gyro_rate_hz: float = Field(default=400.0, gt=0.0)
    gyro_noise: float = Field(default=0.0, ge=0.0)
    image_noise: float = Field(default=0.0, ge=0.0)
    frame_count: int = Field(default=3, ge=2)
    frame_rate_hz: float = Field(default=30.0, gt=0.0)
    texture_cell: float = Field(default=16.0, gt=0.0)
    texture_octaves: int = Field(default=3, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _sampling(self) -> "SynthSpec":
        if not self.gyro_rate_hz > 2 * self.frame_rate_hz:
            raise ValueError("gyro_rate_hz must exceed twice frame_rate_hz")
        return self

    @property
    def frame_period_ns(self) -> int:
        return int(round(NS_PER_S / self.frame_rate_hz))

    @property
    def gyro_period_ns(self) -> int:
        return int(round(NS_PER_S / self.gyro_rate_hz))

    def frame_timestamps(self) -> np.ndarray:
        """Frames start two periods in so anchored exposure offsets stay inside the gyro log."""
        return (np.arange(self.frame_count, dtype=np.int64) + 2) * self.frame_period_ns


class ValueNoise:
    """Band-limited texture: cubic-spline interpolated random lattices, one per octave."""

    def __init__(self, rng: np.random.Generator, extent: Tuple[float, float, float, float], cell: float, octaves: int) -> None:
        self.x0, self.y0, x1, y1 = extent
        self.layers: List[Tuple[float, float, np.ndarray]] = []
        for octave in range(octaves):
            step = cell / (2**octave)
            rows = int(math.ceil((y1 - self.y0) / step)) + 4
            cols = int(math.ceil((x1 - self.x0) / step)) + 4
            lattice = rng.random((rows, cols))
            self.layers.append((step, 0.5**octave, ndimage.spline_filter(lattice, order=3, mode="mirror")))
        self.total = sum(weight for _, weight, _ in self.layers)

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        value = np.zeros(np.shape(xs), dtype=np.float64)
        for step, weight, coeffs in self.layers:
            coords = np.stack([(ys - self.y0) / step + 1.0, (xs - self.x0) / step + 1.0])
            value += weight * ndimage.map_coordinates(coeffs, coords, order=3, mode="mirror", prefilter=False)
        return 30.0 + 195.0 * np.clip(value / self.total, 0.0, 1.0)


@dataclass(frozen=True)
class SynthSequence:
    spec: SynthSpec
    images: List[np.ndarray]
    gyro_log: GyroLog
    frame_index: FrameIndex
    gt_flows: List[FlowField]
    gt_pairs: List[List[Correspondence]]
    gt_arrays: List[HomographyArray]
    foreground_masks: List[np.ndarray] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def pair_ids(self) -> List[Tuple[int, int]]:
        return [(k, k + 1) for k in range(len(self.images) - 1)]


def row_offsets_ns(spec: SynthSpec) -> np.ndarray:
    """Exact exposure offset of every row (float ns), without patch grouping."""
    rows = np.arange(spec.intrinsics.height, dtype=np.float64)
    return spec.rolling_shutter.row_offsets_ns(rows, spec.intrinsics.height, spec.frame_period_ns)


def view_homographies(spec: SynthSpec, times_ns: np.ndarray) -> np.ndarray:
    """H(t) mapping reference-texture pixels to image pixels, one per time."""
    K = spec.intrinsics.matrix()
    K_inv = spec.intrinsics.inverse()
    seconds = np.asarray(times_ns, dtype=np.float64) / NS_PER_S
    orientation = spec.trajectory.orientation(seconds)
    if spec.translation is None:
        motion = orientation
    else:
        centre = np.asarray(spec.translation.velocity)[None, :] * seconds[:, None]
        normal = np.asarray(spec.translation.plane_normal)
        plane = np.eye(3)[None] - centre[:, :, None] * normal[None, None, :] / spec.translation.plane_depth
        motion = orientation @ plane
    return normalize_homography(K[None] @ motion @ K_inv[None])


def same_row_homographies(spec: SynthSpec, t_a: int, t_b: int) -> np.ndarray:
    """Per-row H_b(y)·H_a(y)⁻¹ for the exact exposure time of each row."""
    offsets = row_offsets_ns(spec)
    H_a = view_homographies(spec, t_a + offsets)
    H_b = view_homographies(spec, t_b + offsets)
    return normalize_homography(H_b @ np.linalg.inv(H_a))


def per_row_exact_field(spec: SynthSpec, t_a: int, t_b: int) -> FlowField:
    """Background flow with one exact-time homography per row (no patches, no SLERP)."""
    width, height = spec.intrinsics.width, spec.intrinsics.height
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    px, py, pw = project_rows(same_row_homographies(spec, t_a, t_b), xs, ys)
    return FlowField(px / pw - xs[None, :], py / pw - ys[:, None])


def foreground_origin(spec: SynthSpec, frame: int) -> Tuple[float, float]:
    fg = spec.foreground
    assert fg is not None
    return fg.x + fg.velocity[0] * frame, fg.y + fg.velocity[1] * frame


def foreground_mask(spec: SynthSpec, frame: int) -> np.ndarray:
    width, height = spec.intrinsics.width, spec.intrinsics.height
    if spec.foreground is None:
        return np.zeros((height, width), dtype=bool)
    ox, oy = foreground_origin(spec, frame)
    xs = np.arange(width, dtype=np.float64)[None, :]
    ys = np.arange(height, dtype=np.float64)[:, None]
    return (xs >= ox) & (xs < ox + spec.foreground.width) & (ys >= oy) & (ys < oy + spec.foreground.height)


def _render_frame(
    spec: SynthSpec,
    background: ValueNoise,
    sprite: Optional[ValueNoise],
    frame: int,
    t_frame: int,
    noise_rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    width, height = spec.intrinsics.width, spec.intrinsics.height
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    inverse = np.linalg.inv(view_homographies(spec, t_frame + row_offsets_ns(spec)))
    sx, sy, sw = project_rows(inverse, xs, ys)
    image = background.sample(sx / sw, sy / sw)

    mask = foreground_mask(spec, frame)
    if sprite is not None and mask.any():
        ox, oy = foreground_origin(spec, frame)
        grid_x, grid_y = np.meshgrid(xs, ys)
        image = np.where(mask, sprite.sample(grid_x - ox, grid_y - oy), image)
    if spec.image_noise > 0:
        image = image + noise_rng.normal(0.0, spec.image_noise, image.shape)
    return np.clip(np.rint(image), 0, 255).astype(np.uint8), mask


def simulate_gyro_log(spec: SynthSpec, end_ns: int, rng: Optional[np.random.Generator] = None) -> GyroLog:
    """Readings at a fixed rate; each is the mean rate over the interval that follows it."""
    period = spec.gyro_period_ns
    timestamps = np.arange(0, end_ns + period, period, dtype=np.int64)
    seconds = timestamps.astype(np.float64) / NS_PER_S
    angles = spec.trajectory.angle_at(seconds)
    rates = np.empty_like(seconds)
    rates[:-1] = np.diff(angles) / np.diff(seconds)
    rates[-1] = spec.trajectory.rate_at(seconds[-1])
    omegas = rates[:, None] * np.asarray(spec.trajectory.axis)[None, :]
    if spec.gyro_noise > 0:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        omegas = omegas + rng.normal(0.0, spec.gyro_noise, omegas.shape)
    return GyroLog(timestamps, omegas, clock_id="synth")


def _background_pairs(
    spec: SynthSpec, rows_H: np.ndarray, mask_a: np.ndarray, mask_b: np.ndarray, spacing: int = 32
) -> List[Correspondence]:
    width, height = spec.intrinsics.width, spec.intrinsics.height
    pairs: List[Correspondence] = []
    for y in range(spacing // 2, height, spacing):
        H = rows_H[y]
        for x in range(spacing // 2, width, spacing):
            if mask_a[y, x]:
                continue
            target = H @ np.array([x, y, 1.0])
            qx, qy = target[0] / target[2], target[1] / target[2]
            if not (0 <= qx <= width - 1 and 0 <= qy <= height - 1):
                continue
            if mask_b[int(round(qy)), int(round(qx))]:
                continue
            pairs.append(Correspondence((float(x), float(y)), (float(qx), float(qy))))
    return pairs


def synth_sequence(spec: SynthSpec) -> SynthSequence:
    width, height = spec.intrinsics.width, spec.intrinsics.height
    streams = np.random.SeedSequence(spec.seed).spawn(3)
    texture_rng, gyro_rng, noise_rng = (np.random.default_rng(s) for s in streams)

    margin = float(max(width, height))
    background = ValueNoise(texture_rng, (-margin, -margin, width + margin, height + margin), spec.texture_cell, spec.texture_octaves)
    sprite = None
    if spec.foreground is not None:
        fg = spec.foreground
        sprite = ValueNoise(
            np.random.default_rng(fg.texture_seed),
            (-2.0, -2.0, fg.width + 2.0, fg.height + 2.0),
            max(spec.texture_cell / 2, 2.0),
            spec.texture_octaves,
        )

    warnings: List[str] = []
    timestamps = spec.frame_timestamps()
    images: List[np.ndarray] = []
    masks: List[np.ndarray] = []
    for frame, t_frame in enumerate(timestamps):
        image, mask = _render_frame(spec, background, sprite, frame, int(t_frame), noise_rng)
        if spec.foreground is not None and not mask.any():
            message = f"foreground is outside frame {frame}"
            logger.warning(message)
            warnings.append(message)
        images.append(image)
        masks.append(mask)

    gyro_end = int(timestamps[-1]) + 2 * spec.frame_period_ns
    gyro_log = simulate_gyro_log(spec, gyro_end, gyro_rng)
    index = FrameIndex(
        tuple(FrameRecord(frame, int(ts), f"frames/frame_{frame:04d}.png") for frame, ts in enumerate(timestamps))
    )

    gt_flows: List[FlowField] = []
    gt_pairs: List[List[Correspondence]] = []
    gt_arrays: List[HomographyArray] = []
    for frame in range(spec.frame_count - 1):
        t_a, t_b = int(timestamps[frame]), int(timestamps[frame + 1])
        rows_H = same_row_homographies(spec, t_a, t_b)
        xs = np.arange(width, dtype=np.float64)
        ys = np.arange(height, dtype=np.float64)
        px, py, pw = project_rows(rows_H, xs, ys)
        u = px / pw - xs[None, :]
        v = py / pw - ys[:, None]
        if spec.foreground is not None:
            vx, vy = spec.foreground.velocity
            u = np.where(masks[frame], vx, u)
            v = np.where(masks[frame], vy, v)
        gt_flows.append(FlowField(u, v))
        gt_arrays.append(HomographyArray(rows_H, width, height))
        gt_pairs.append(_background_pairs(spec, rows_H, masks[frame], masks[frame + 1]))

    return SynthSequence(spec, images, gyro_log, index, gt_flows, gt_pairs, gt_arrays, masks, warnings)


def project_config_for(spec: SynthSpec, base: Optional[Dict[str, Any]] = None) -> ProjectConfig:
    raw = dict(base or {})
    raw["intrinsics"] = spec.intrinsics.model_dump()
    raw["rolling_shutter"] = spec.rolling_shutter.model_dump()
    return validate_model(ProjectConfig, raw)


def write_synth_project(seq: SynthSequence, out_dir: Union[str, Path], config: Optional[ProjectConfig] = None) -> List[Path]:
    """Emit a synthetic project in the regular on-disk formats; returns written paths in order."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    def text(path: Path, content: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content, encoding="utf-8")
        written.append(path)

    for record, image in zip(seq.frame_index, seq.images):
        written.append(save_image(root / record.path, image))
    text(root / "frames.txt", write_frame_index(seq.frame_index))
    text(root / "gyro.txt", write_gyro_log(seq.gyro_log))
    for (a, b), flow, pairs, array in zip(seq.pair_ids(), seq.gt_flows, seq.gt_pairs, seq.gt_arrays):
        written.append(save_flo(root / "gt" / f"flow_{a:04d}_{b:04d}.flo", flow))
        text(root / "gt" / f"pts_{a:04d}_{b:04d}.txt", write_correspondences(pairs))
        text(root / "gt" / f"homography_{a:04d}_{b:04d}.txt", write_homography_array(array))
    written.append(save_config(root / "project_config.yaml", config or project_config_for(seq.spec)))
    text(root / "synth_spec.yaml", dump_yaml(seq.spec.model_dump()))
    return written


def read_synth_spec(path: Union[str, Path]) -> SynthSpec:
    return validate_model(SynthSpec, read_yaml_file(path), str(path))


__all__ = [
    "TrajectorySpec",
    "TranslationSpec",
    "ForegroundSpec",
    "SynthSpec",
    "SynthSequence",
    "ValueNoise",
    "row_offsets_ns",
    "view_homographies",
    "same_row_homographies",
    "per_row_exact_field",
    "simulate_gyro_log",
    "foreground_mask",
    "synth_sequence",
    "project_config_for",
    "write_synth_project",
    "read_synth_spec",
]
