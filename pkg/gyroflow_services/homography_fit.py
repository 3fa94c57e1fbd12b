"""Weighted homography fitting from fused flow.

Samples of the fused flow are weighted by 1 − M, so pixels the fusion map
hands to the residual flow (moving objects) barely influence the fit. A
single homography or a per-row-patch array can be fitted; the array variant
fits a residual on top of the gyro homographies and smooths the residual
parameters along the patch axis.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from .core_math import CameraIntrinsics
from .errors import ArgumentError, DegenerateConfigurationError, GyroflowError
from .fusion import FusionParams, FusionResult, run_fusion
from .gyro_field import homography_array_to_field, row_homographies
from .local_flow import LocalFlowParams
from .types import Correspondence, FlowField, FusionMap, HomographyArray, correspondence_arrays, normalize_homography

logger = logging.getLogger(__name__)

MIN_POINTS = 4
RANK_TOLERANCE = 1e-12
INLIER_PX = 1.0
REWEIGHT_FLOOR = 1e-2
MIN_GAIN_PX = 0.1


@dataclass(frozen=True)
class HomographyEstimate:
    H: np.ndarray
    inlier_rms: float
    support: float

    def __post_init__(self) -> None:
        if not self.inlier_rms >= 0:
            raise ArgumentError("inlier_rms must be non-negative", inlier_rms=self.inlier_rms)


def flow_samples(f: FlowField, M: Optional[FusionMap], stride: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stride-grid samples (p, p + f(p), 1 − M(p)) as arrays; unlabeled pixels are skipped."""
    if stride < 1:
        raise ArgumentError("stride must be positive", stride=stride)
    if M is not None and M.shape != f.shape:
        raise ArgumentError("map and flow dimensions differ", map_shape=M.shape, flow_shape=f.shape)
    ys, xs = np.meshgrid(np.arange(0, f.height, stride), np.arange(0, f.width, stride), indexing="ij")
    ys, xs = ys.reshape(-1), xs.reshape(-1)
    keep = f.validity()[ys, xs]
    ys, xs = ys[keep], xs[keep]
    p = np.stack([xs, ys], axis=1).astype(np.float64)
    q = p + np.stack([f.u[ys, xs], f.v[ys, xs]], axis=1)
    w = np.ones(len(p)) if M is None else 1.0 - M.values[ys, xs]
    return p, q, np.clip(w, 0.0, None)


def flow_to_correspondences(f: FlowField, M: Optional[FusionMap], stride: int) -> List[Correspondence]:
    p, q, w = flow_samples(f, M, stride)
    return [
        Correspondence((float(a[0]), float(a[1])), (float(b[0]), float(b[1])), float(weight))
        for a, b, weight in zip(p, q, w)
    ]


def _normalizer(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Similarity moving the weighted centroid to the origin with mean distance √2."""
    total = weights.sum()
    centroid = (weights[:, None] * points).sum(axis=0) / total
    mean_distance = float((weights * np.linalg.norm(points - centroid, axis=1)).sum() / total)
    if not mean_distance > 1e-12:
        raise DegenerateConfigurationError("points are coincident", mean_distance=mean_distance)
    scale = math.sqrt(2.0) / mean_distance
    return np.array(
        [[scale, 0.0, -scale * centroid[0]], [0.0, scale, -scale * centroid[1]], [0.0, 0.0, 1.0]]
    )


def _apply(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    homogeneous = np.column_stack([points, np.ones(len(points))]) @ T.T
    return homogeneous[:, :2] / homogeneous[:, 2:3]


def project(H: np.ndarray, points: np.ndarray) -> np.ndarray:
    homogeneous = np.column_stack([points, np.ones(len(points))]) @ np.asarray(H).T
    with np.errstate(divide="ignore", invalid="ignore"):
        return homogeneous[:, :2] / homogeneous[:, 2:3]


def reprojection_errors(H: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    errors = np.linalg.norm(project(H, p) - q, axis=1)
    return np.where(np.isfinite(errors), errors, np.inf)


def _dlt(p: np.ndarray, q: np.ndarray, w: np.ndarray) -> np.ndarray:
    Tp = _normalizer(p, w)
    Tq = _normalizer(q, w)
    pn = _apply(Tp, p)
    qn = _apply(Tq, q)
    x, y = pn[:, 0], pn[:, 1]
    xp, yp = qn[:, 0], qn[:, 1]
    zeros, ones = np.zeros_like(x), np.ones_like(x)
    rows_u = np.column_stack([-x, -y, -ones, zeros, zeros, zeros, xp * x, xp * y, xp])
    rows_v = np.column_stack([zeros, zeros, zeros, -x, -y, -ones, yp * x, yp * y, yp])
    root = np.sqrt(w)[:, None]
    A = np.vstack([rows_u * root, rows_v * root])
    if A.shape[0] < 9:
        A = np.vstack([A, np.zeros((9 - A.shape[0], 9))])

    _, singular, vt = np.linalg.svd(A, full_matrices=False)
    if singular.size < 8 or singular[7] / singular[0] < RANK_TOLERANCE:
        raise DegenerateConfigurationError(
            "design matrix is rank deficient",
            points=len(p),
            singular_ratio=float(singular[min(7, singular.size - 1)] / singular[0]),
        )
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Tq) @ Hn @ Tp
    if abs(H[2, 2]) < 1e-15:
        raise DegenerateConfigurationError("fitted homography has a vanishing bottom-right entry")
    return H / H[2, 2]


def fit_weighted_homography_arrays(
    p: np.ndarray,
    q: np.ndarray,
    w: np.ndarray,
    *,
    refine_passes: int = 3,
    min_weight: float = 1e-3,
) -> HomographyEstimate:
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 2)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    keep = w >= min_weight
    if int(keep.sum()) < MIN_POINTS:
        raise DegenerateConfigurationError(
            "fewer than 4 correspondences carry weight", effective_points=int(keep.sum()), min_weight=min_weight
        )
    p, q, w = p[keep], q[keep], w[keep]

    H = _dlt(p, q, w)
    for _ in range(refine_passes):
        errors = reprojection_errors(H, p, q)
        factor = np.clip(INLIER_PX / np.maximum(errors, 1e-12), REWEIGHT_FLOOR, 1.0)
        H = _dlt(p, q, w * factor)

    return HomographyEstimate(H, weighted_rms(reprojection_errors(H, p, q), w), float(w.sum()))


def weighted_rms(errors: np.ndarray, w: np.ndarray) -> float:
    """sqrt(Σ w e² / Σ w) over the finite errors."""
    finite = np.isfinite(errors)
    return math.sqrt(float((w[finite] * errors[finite] ** 2).sum() / max(w[finite].sum(), 1e-300)))


def fit_weighted_homography(
    c: Sequence[Correspondence], *, refine_passes: int = 3, min_weight: float = 1e-3
) -> HomographyEstimate:
    p, q, w = correspondence_arrays(c)
    return fit_weighted_homography_arrays(p, q, w, refine_passes=refine_passes, min_weight=min_weight)


def fit_global_homography(
    f: FlowField, M: Optional[FusionMap], stride: int = 8, *, refine_passes: int = 3, min_weight: float = 1e-3
) -> HomographyEstimate:
    """One homography for the whole frame from the weighted flow samples."""
    p, q, w = flow_samples(f, M, stride)
    return fit_weighted_homography_arrays(p, q, w, refine_passes=refine_passes, min_weight=min_weight)


def smooth_patch_parameters(params: np.ndarray, smoothing: float) -> np.ndarray:
    """Minimise Σ‖θ̂_n − θ_n‖² + λ Σ‖θ̂_{n+1} − θ̂_n‖² along the patch axis.

    λ = 0 returns the input; λ = ∞ returns the mean for every patch.
    """
    if smoothing < 0 or math.isnan(smoothing):
        raise ArgumentError("smoothing must be non-negative", smoothing=smoothing)
    count = params.shape[0]
    if count <= 1 or smoothing == 0:
        return params.copy()
    if math.isinf(smoothing):
        return np.broadcast_to(params.mean(axis=0), params.shape).copy()
    degree = np.full(count, 2.0)
    degree[0] = degree[-1] = 1.0
    banded = np.zeros((3, count))
    banded[0, 1:] = -smoothing
    banded[1] = 1.0 + smoothing * degree
    banded[2, :-1] = -smoothing
    return linalg.solve_banded((1, 1), banded, params)


@dataclass(frozen=True)
class RsHomographyFit:
    array: HomographyArray
    residuals: np.ndarray
    inherited: List[int] = field(default_factory=list)
    inlier_rms: List[float] = field(default_factory=list)
    kept: List[int] = field(default_factory=list)


def fit_rs_homography_details(
    f: FlowField,
    M: Optional[FusionMap],
    gyro: HomographyArray,
    smoothing: float,
    *,
    K: Optional[CameraIntrinsics] = None,
    stride: int = 8,
    refine_passes: int = 3,
    min_weight: float = 1e-3,
    min_gain: float = MIN_GAIN_PX,
) -> RsHomographyFit:
    """Per-patch residual fits on top of ``gyro``, smoothed along the patch axis.

    A patch inherits its gyro homography when it has too little support, and
    keeps it when the fitted residual lowers the weighted reprojection RMS by
    less than ``min_gain`` pixels.
    """
    if (gyro.width, gyro.height) != (f.width, f.height):
        raise ArgumentError(
            "gyro array and flow sizes differ", gyro_size=(gyro.width, gyro.height), flow_size=(f.width, f.height)
        )
    p, q, w = flow_samples(f, M, stride)
    reference = np.empty_like(p)
    rows = np.unique(p[:, 1])
    per_row = row_homographies(gyro, K, rows)
    for H_row, row in zip(per_row, rows):
        mask = p[:, 1] == row
        reference[mask] = project(H_row, p[mask])
    patch_of = gyro.patch_of_rows(p[:, 1])

    residuals = np.tile(np.eye(3), (gyro.patch_count, 1, 1))
    fitted: List[int] = []
    inherited: List[int] = []
    kept: List[int] = []
    rms: List[float] = []
    for index in range(gyro.patch_count):
        mask = (patch_of == index) & np.isfinite(reference).all(axis=1)
        try:
            estimate = fit_weighted_homography_arrays(
                reference[mask], q[mask], w[mask], refine_passes=refine_passes, min_weight=min_weight
            )
        except DegenerateConfigurationError as exc:
            logger.warning("patch %d inherits its gyro homography: %s", index, exc)
            inherited.append(index)
            rms.append(float("nan"))
            continue
        support = mask & (w >= min_weight)
        baseline = weighted_rms(np.linalg.norm(reference[support] - q[support], axis=1), w[support])
        gain = baseline - estimate.inlier_rms
        if not gain >= min_gain:
            logger.debug("patch %d keeps its gyro homography: fit gains %.4f px", index, gain)
            kept.append(index)
            rms.append(baseline)
            continue
        residuals[index] = estimate.H
        fitted.append(index)
        rms.append(estimate.inlier_rms)

    if not fitted:
        return RsHomographyFit(gyro, residuals, inherited, rms, kept)
    params = residuals[fitted].reshape(len(fitted), 9)
    residuals[fitted] = smooth_patch_parameters(params, smoothing).reshape(-1, 3, 3)
    homographies = normalize_homography(residuals @ gyro.homographies)
    try:
        array = HomographyArray(homographies, gyro.width, gyro.height)
    except GyroflowError as exc:
        raise DegenerateConfigurationError(f"fitted array is not invertible: {exc}", **exc.context) from exc
    return RsHomographyFit(array, residuals, inherited, rms, kept)


def fit_rs_homography_array(
    f: FlowField,
    M: Optional[FusionMap],
    gyro: HomographyArray,
    smoothing: float,
    *,
    K: Optional[CameraIntrinsics] = None,
    stride: int = 8,
    refine_passes: int = 3,
    min_weight: float = 1e-3,
    min_gain: float = MIN_GAIN_PX,
) -> HomographyArray:
    return fit_rs_homography_details(
        f, M, gyro, smoothing, K=K, stride=stride, refine_passes=refine_passes, min_weight=min_weight, min_gain=min_gain
    ).array


def homography_to_field(H: np.ndarray, width: int, height: int) -> FlowField:
    return homography_array_to_field(HomographyArray.single(H, width, height), None, width, height)


@dataclass(frozen=True)
class FusionInputs:
    """Everything a fusion pass needs apart from the homography array."""

    img_a: np.ndarray
    img_b: np.ndarray
    K: Optional[CameraIntrinsics]
    params: FusionParams = field(default_factory=FusionParams)
    local: LocalFlowParams = field(default_factory=LocalFlowParams)

    def run(self, homographies: HomographyArray) -> FusionResult:
        return run_fusion(self.img_a, self.img_b, homographies, self.K, self.params, self.local)


def replace_gyro_with_homography(inputs: FusionInputs, fitted: HomographyArray) -> FlowField:
    """Second fusion pass with the fitted array standing in for the gyro array."""
    return inputs.run(fitted).flow


__all__ = [
    "HomographyEstimate",
    "RsHomographyFit",
    "FusionInputs",
    "flow_samples",
    "flow_to_correspondences",
    "project",
    "reprojection_errors",
    "fit_weighted_homography",
    "fit_weighted_homography_arrays",
    "weighted_rms",
    "fit_global_homography",
    "smooth_patch_parameters",
    "fit_rs_homography_details",
    "fit_rs_homography_array",
    "homography_to_field",
    "replace_gyro_with_homography",
]
