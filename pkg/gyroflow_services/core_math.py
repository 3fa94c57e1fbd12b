"""Rotation, quaternion and intrinsics primitives.

Conventions:
    - Camera frame: x right, y down, z forward.
    - Quaternions are stored as (w, x, y, z) with the canonical sign w >= 0.
    - ``integrate_gyro`` composes interval rotations by right-multiplication in
      time order (body-frame rates); the result maps frame-a camera rays to
      frame-b camera rays and feeds ``rotation_homography`` as-is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import (
    ArgumentError,
    InsufficientCoverageError,
    InvalidQuaternionError,
    InvalidRotationError,
)

ROTATION_TOLERANCE = 1e-6
QUATERNION_TOLERANCE = 1e-6
SMALL_ANGLE = 1e-8
NS_PER_S = 1e9


@dataclass(frozen=True)
class GyroSample:
    """One angular-velocity reading (rad/s, device axes) at an integer ns timestamp."""

    omega: Tuple[float, float, float]
    timestamp: int

    def __post_init__(self) -> None:
        if len(self.omega) != 3:
            raise ArgumentError("omega must have three components", field="omega")
        if not all(math.isfinite(float(value)) for value in self.omega):
            raise ArgumentError("omega components must be finite", field="omega", timestamp=self.timestamp)
        if int(self.timestamp) < 0:
            raise ArgumentError("timestamp must be non-negative", field="timestamp", timestamp=self.timestamp)


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "UnitQuaternion":
        """Normalize and canonicalize (w >= 0)."""
        q = np.asarray(values, dtype=np.float64)
        q = q / np.linalg.norm(q)
        if q[0] < 0.0:
            q = -q
        return cls(float(q[0]), float(q[1]), float(q[2]), float(q[3]))

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))


class CameraIntrinsics(BaseModel):
    """Pinhole intrinsics in pixels; skew is fixed at zero."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float = Field(ge=0)
    cy: float = Field(ge=0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    @model_validator(mode="after")
    def _principal_point_inside(self) -> "CameraIntrinsics":
        if not self.cx < self.width:
            raise ValueError(f"cx={self.cx} must satisfy 0 <= cx < width={self.width}")
        if not self.cy < self.height:
            raise ValueError(f"cy={self.cy} must satisfy 0 <= cy < height={self.height}")
        return self

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]],
            dtype=np.float64,
        )

    def inverse(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ],
            dtype=np.float64,
        )


IDENTITY_REMAP: Tuple[Tuple[int, int, int], ...] = ((1, 0, 0), (0, 1, 0), (0, 0, 1))


class AxisRemap(BaseModel):
    """Signed permutation taking device gyro axes to camera axes (omega_cam = A @ omega_dev)."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    matrix: Tuple[Tuple[int, int, int], Tuple[int, int, int], Tuple[int, int, int]] = IDENTITY_REMAP

    @field_validator("matrix")
    @classmethod
    def _signed_permutation(cls, value: Any) -> Any:
        array = np.asarray(value, dtype=np.int64)
        if array.shape != (3, 3) or not np.all(np.isin(array, (-1, 0, 1))):
            raise ValueError("axis remap must be a 3x3 matrix of -1, 0, 1 entries")
        nonzero = np.abs(array)
        if not (np.all(nonzero.sum(axis=0) == 1) and np.all(nonzero.sum(axis=1) == 1)):
            raise ValueError("axis remap must have exactly one +-1 per row and per column")
        return value

    def as_array(self) -> np.ndarray:
        return np.asarray(self.matrix, dtype=np.float64)

    def apply(self, omegas: np.ndarray) -> np.ndarray:
        return np.asarray(omegas, dtype=np.float64) @ self.as_array().T


def skew(v: Sequence[float]) -> np.ndarray:
    x, y, z = (float(c) for c in v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]], dtype=np.float64)


def rodrigues_batch(axis_angles: np.ndarray) -> np.ndarray:
    """Vectorised Rodrigues formula: (N, 3) axis-angle vectors -> (N, 3, 3)."""
    v = np.asarray(axis_angles, dtype=np.float64).reshape(-1, 3)
    theta2 = np.einsum("ij,ij->i", v, v)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    # second-order series below SMALL_ANGLE
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    k = np.zeros((v.shape[0], 3, 3), dtype=np.float64)
    k[:, 0, 1] = -v[:, 2]
    k[:, 0, 2] = v[:, 1]
    k[:, 1, 0] = v[:, 2]
    k[:, 1, 2] = -v[:, 0]
    k[:, 2, 0] = -v[:, 1]
    k[:, 2, 1] = v[:, 0]
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[:, None, None] * k + b[:, None, None] * (k @ k)


def rodrigues(axis_angle: Sequence[float]) -> np.ndarray:
    """exp of the skew-symmetric matrix of ``axis_angle`` (radians)."""
    v = np.asarray(axis_angle, dtype=np.float64)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ArgumentError("axis_angle must be a finite 3-vector", value=str(axis_angle))
    return rodrigues_batch(v[None, :])[0]


def check_rotation(R: np.ndarray, tolerance: float = ROTATION_TOLERANCE) -> np.ndarray:
    matrix = np.asarray(R, dtype=np.float64)
    if matrix.shape != (3, 3) or not np.all(np.isfinite(matrix)):
        raise InvalidRotationError("rotation must be a finite 3x3 matrix")
    deviation = float(np.max(np.abs(matrix.T @ matrix - np.eye(3))))
    det = float(np.linalg.det(matrix))
    if deviation > tolerance or abs(det - 1.0) > tolerance:
        raise InvalidRotationError(
            "matrix is not a proper rotation",
            orthonormality_error=deviation,
            determinant=det,
            tolerance=tolerance,
        )
    return matrix


def _canonical(q: np.ndarray) -> np.ndarray:
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def rotations_to_quaternions(Rs: np.ndarray) -> np.ndarray:
    """Shepperd's method on a stack of rotations: (N, 3, 3) -> (N, 4) canonical (w, x, y, z)."""
    m = np.asarray(Rs, dtype=np.float64).reshape(-1, 3, 3)
    m00, m11, m22 = m[:, 0, 0], m[:, 1, 1], m[:, 2, 2]
    candidates = np.stack([m00 + m11 + m22, m00, m11, m22], axis=1)
    branch = np.argmax(candidates, axis=1)
    q = np.empty((m.shape[0], 4), dtype=np.float64)
    for index in range(m.shape[0]):
        r = m[index]
        choice = branch[index]
        if choice == 0:
            s = math.sqrt(max(1.0 + r[0, 0] + r[1, 1] + r[2, 2], 0.0)) * 2.0
            q[index] = (0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s)
        elif choice == 1:
            s = math.sqrt(max(1.0 + r[0, 0] - r[1, 1] - r[2, 2], 0.0)) * 2.0
            q[index] = ((r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s)
        elif choice == 2:
            s = math.sqrt(max(1.0 + r[1, 1] - r[0, 0] - r[2, 2], 0.0)) * 2.0
            q[index] = ((r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s)
        else:
            s = math.sqrt(max(1.0 + r[2, 2] - r[0, 0] - r[1, 1], 0.0)) * 2.0
            q[index] = ((r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s)
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return _canonical(q)


def quaternions_to_rotations(qs: np.ndarray) -> np.ndarray:
    q = np.asarray(qs, dtype=np.float64).reshape(-1, 4)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    out = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    out[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[:, 0, 1] = 2.0 * (x * y - w * z)
    out[:, 0, 2] = 2.0 * (x * z + w * y)
    out[:, 1, 0] = 2.0 * (x * y + w * z)
    out[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[:, 1, 2] = 2.0 * (y * z - w * x)
    out[:, 2, 0] = 2.0 * (x * z - w * y)
    out[:, 2, 1] = 2.0 * (y * z + w * x)
    out[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return out


def rotation_to_quaternion(R: np.ndarray) -> UnitQuaternion:
    matrix = check_rotation(R)
    q = rotations_to_quaternions(matrix[None])[0]
    return UnitQuaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


def quaternion_to_rotation(q: UnitQuaternion) -> np.ndarray:
    norm = q.norm()
    if not math.isfinite(norm) or abs(norm - 1.0) > QUATERNION_TOLERANCE:
        raise InvalidQuaternionError("quaternion is not unit norm", norm=norm, tolerance=QUATERNION_TOLERANCE)
    return quaternions_to_rotations(q.as_array()[None])[0]


def slerp_batch(q0: np.ndarray, q1: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Shortest-arc SLERP over stacks: q0, q1 are (N, 4), t is (N,)."""
    a = np.asarray(q0, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(q1, dtype=np.float64).reshape(-1, 4)
    weight = np.asarray(t, dtype=np.float64).reshape(-1)
    dot = np.einsum("ij,ij->i", a, b)
    b = np.where(dot[:, None] < 0.0, -b, b)
    # angle between a and b as 4-vectors; accurate for nearly equal inputs
    theta = 2.0 * np.arctan2(np.linalg.norm(b - a, axis=1), np.linalg.norm(b + a, axis=1))
    sin_theta = np.sin(theta)
    near = sin_theta < 1e-12
    safe = np.where(near, 1.0, sin_theta)
    wa = np.where(near, 1.0 - weight, np.sin((1.0 - weight) * theta) / safe)
    wb = np.where(near, weight, np.sin(weight * theta) / safe)
    out = wa[:, None] * a + wb[:, None] * b
    out /= np.linalg.norm(out, axis=1, keepdims=True)
    return _canonical(out)


def slerp(q0: UnitQuaternion, q1: UnitQuaternion, t: float) -> UnitQuaternion:
    if not 0.0 <= t <= 1.0:
        raise ArgumentError("slerp parameter must lie in [0, 1]", t=t)
    q = slerp_batch(q0.as_array()[None], q1.as_array()[None], np.array([t]))[0]
    return UnitQuaternion(float(q[0]), float(q[1]), float(q[2]), float(q[3]))


def _sample_arrays(samples: Any) -> Tuple[np.ndarray, np.ndarray]:
    timestamps = getattr(samples, "timestamps", None)
    omegas = getattr(samples, "omegas", None)
    if timestamps is not None and omegas is not None:
        return np.asarray(timestamps, dtype=np.int64), np.asarray(omegas, dtype=np.float64)
    items = list(samples)
    if not items:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3), dtype=np.float64)
    return (
        np.array([int(s.timestamp) for s in items], dtype=np.int64),
        np.array([s.omega for s in items], dtype=np.float64),
    )


def integrate_gyro(
    samples: Any,
    t_start: int,
    t_end: int,
    remap: AxisRemap | None = None,
) -> np.ndarray:
    """Relative rotation R(t_end)·Rᵀ(t_start) from gyro readings.

    ``samples`` is a sequence of GyroSample (or a GyroLog). Each sub-interval
    uses the angular velocity linearly interpolated at its left end, which is
    the left sample itself everywhere except at ``t_start``.
    """
    t_start = int(t_start)
    t_end = int(t_end)
    if t_end < t_start:
        raise ArgumentError("t_end precedes t_start", t_start=t_start, t_end=t_end)
    timestamps, omegas = _sample_arrays(samples)
    if timestamps.size == 0 or timestamps[0] > t_start or timestamps[-1] < t_end:
        raise InsufficientCoverageError(
            "gyro samples do not bracket the interval",
            t_start=t_start,
            t_end=t_end,
            first_sample=int(timestamps[0]) if timestamps.size else None,
            last_sample=int(timestamps[-1]) if timestamps.size else None,
        )
    if t_end == t_start:
        return np.eye(3)
    rates = (remap or AxisRemap()).apply(omegas)

    first = int(np.searchsorted(timestamps, t_start, side="right")) - 1
    inner = np.flatnonzero((timestamps > t_start) & (timestamps < t_end))
    knots = np.concatenate(([t_start], timestamps[inner], [t_end])).astype(np.int64)

    if timestamps[first] == t_start or first + 1 >= timestamps.size:
        start_rate = rates[first]
    else:
        span = float(timestamps[first + 1] - timestamps[first])
        alpha = float(t_start - timestamps[first]) / span
        start_rate = (1.0 - alpha) * rates[first] + alpha * rates[first + 1]
    interval_rates = np.vstack([start_rate[None, :], rates[inner]])
    durations = np.diff(knots).astype(np.float64) / NS_PER_S

    increments = rodrigues_batch(interval_rates * durations[:, None])
    rotation = np.eye(3)
    for step in increments:
        rotation = rotation @ step
    return rotation


__all__ = [
    "GyroSample",
    "UnitQuaternion",
    "CameraIntrinsics",
    "AxisRemap",
    "skew",
    "rodrigues",
    "rodrigues_batch",
    "check_rotation",
    "rotation_to_quaternion",
    "quaternion_to_rotation",
    "rotations_to_quaternions",
    "quaternions_to_rotations",
    "slerp",
    "slerp_batch",
    "integrate_gyro",
]
