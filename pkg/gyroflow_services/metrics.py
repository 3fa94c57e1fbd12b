"""Flow and homography evaluation: AEPE, PCK, PME and error heat maps.

Means use an explicit pairwise (tree) reduction so reported numbers do not
depend on how the caller chunked the data. PCK counts errors strictly below
the threshold.
"""

from __future__ import annotations

import logging
import math
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import ArgumentError, DegenerateProjectionError
from .types import Correspondence, FlowField, HomographyArray, correspondence_arrays

logger = logging.getLogger(__name__)

PROJECTION_EPSILON = 1e-9


def pairwise_sum(values: np.ndarray) -> float:
    level = np.asarray(values, dtype=np.float64).reshape(-1)
    if level.size == 0:
        return 0.0
    while level.size > 1:
        if level.size % 2:
            level = np.append(level, 0.0)
        level = level[0::2] + level[1::2]
    return float(level[0])


def pairwise_mean(values: np.ndarray) -> float:
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        raise ArgumentError("mean of an empty set")
    return pairwise_sum(flat) / flat.size


def _check_pair(est: FlowField, gt: FlowField) -> None:
    if est.shape != gt.shape:
        raise ArgumentError("estimate and ground truth differ in size", est_shape=est.shape, gt_shape=gt.shape)


def error_heatmap(est: FlowField, gt: FlowField) -> np.ndarray:
    """Per-pixel endpoint error ‖est − gt‖₂."""
    _check_pair(est, gt)
    du = est.u - gt.u
    dv = est.v - gt.v
    return np.sqrt(du * du + dv * dv)


def _valid_errors(est: FlowField, gt: FlowField, valid: Optional[np.ndarray]) -> np.ndarray:
    errors = error_heatmap(est, gt)
    mask = gt.validity() if valid is None else np.asarray(valid, dtype=bool) & gt.validity()
    if mask.shape != errors.shape:
        raise ArgumentError("valid mask shape does not match the fields", mask_shape=mask.shape)
    if not mask.any():
        raise ArgumentError("valid mask selects no pixels")
    return errors[mask]


def aepe(est: FlowField, gt: FlowField, valid: Optional[np.ndarray] = None) -> float:
    return pairwise_mean(_valid_errors(est, gt, valid))


def percentage_below(errors: np.ndarray, tau: float) -> float:
    if not tau > 0:
        raise ArgumentError("threshold must be positive", tau=tau)
    errors = np.asarray(errors)
    if errors.size == 0:
        raise ArgumentError("no points to evaluate")
    return 100.0 * int(np.count_nonzero(errors < tau)) / errors.size


def pck(est: FlowField, gt: FlowField, valid: Optional[np.ndarray], tau: float) -> float:
    return percentage_below(_valid_errors(est, gt, valid), tau)


def point_errors(
    H: Union[np.ndarray, HomographyArray], gt_pairs: Sequence[Correspondence]
) -> Tuple[np.ndarray, int]:
    """Reprojection error of every GT pair and the number excluded for a degenerate divide.

    For an array, each point uses the homography of the patch containing its row.
    """
    p, q, _ = correspondence_arrays(gt_pairs)
    if len(p) == 0:
        raise ArgumentError("at least one ground-truth pair is required")
    if isinstance(H, HomographyArray):
        stack = H.homographies[H.patch_of_rows(p[:, 1])]
    else:
        matrix = np.asarray(H, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ArgumentError("homography must be 3x3", shape=matrix.shape)
        stack = np.broadcast_to(matrix, (len(p), 3, 3))
    homogeneous = np.einsum("nij,nj->ni", stack, np.column_stack([p, np.ones(len(p))]))
    ok = np.abs(homogeneous[:, 2]) >= PROJECTION_EPSILON
    excluded = int(np.count_nonzero(~ok))
    if excluded:
        logger.warning("%d ground-truth point(s) excluded: projective divide by ~0", excluded)
    projected = homogeneous[ok, :2] / homogeneous[ok, 2:3]
    delta = projected - q[ok]
    return np.sqrt(delta[:, 0] ** 2 + delta[:, 1] ** 2), excluded


def pme_details(H: Union[np.ndarray, HomographyArray], gt_pairs: Sequence[Correspondence]) -> Tuple[float, int, int]:
    errors, excluded = point_errors(H, gt_pairs)
    if errors.size == 0:
        raise DegenerateProjectionError("every ground-truth point hits a degenerate projection", excluded=excluded)
    return pairwise_mean(errors), int(errors.size), excluded


def pme(H: Union[np.ndarray, HomographyArray], gt_pairs: Sequence[Correspondence]) -> float:
    return pme_details(H, gt_pairs)[0]


def pck_points(H: Union[np.ndarray, HomographyArray], gt_pairs: Sequence[Correspondence], tau: float) -> float:
    errors, _ = point_errors(H, gt_pairs)
    return percentage_below(errors, tau)


def _check_percentages(name: str, table: Dict[float, float]) -> None:
    previous = -math.inf
    for tau in sorted(table):
        value = table[tau]
        if not tau > 0:
            raise ValueError(f"{name} thresholds must be positive")
        if not 0.0 <= value <= 100.0:
            raise ValueError(f"{name}[{tau}] must lie in [0, 100]")
        if value < previous:
            raise ValueError(f"{name} must be non-decreasing in the threshold")
        previous = value


class EvalReport(BaseModel):
    """Metrics for one frame pair (or an aggregate), with the settings that produced them."""

    model_config = ConfigDict(extra="forbid")

    pair: Optional[str] = None
    aepe: Optional[float] = Field(default=None, ge=0.0)
    pck: Dict[float, float] = Field(default_factory=dict)
    pme: Optional[float] = Field(default=None, ge=0.0)
    pck_points: Dict[float, float] = Field(default_factory=dict)
    count: int = Field(default=0, ge=0)
    excluded: int = Field(default=0, ge=0)
    fingerprint: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _percentages(self) -> "EvalReport":
        _check_percentages("pck", self.pck)
        _check_percentages("pck_points", self.pck_points)
        return self

    def record_line(self) -> str:
        """Single ``key=value`` line; thresholds appear as ``pck@<tau>``."""
        fields: List[str] = []
        if self.pair is not None:
            fields.append(f"pair={self.pair}")
        if self.aepe is not None:
            fields.append(f"aepe={self.aepe!r}")
        fields.extend(f"pck@{tau:g}={value!r}" for tau, value in sorted(self.pck.items()))
        if self.pme is not None:
            fields.append(f"pme={self.pme!r}")
        fields.extend(f"pck_points@{tau:g}={value!r}" for tau, value in sorted(self.pck_points.items()))
        fields.append(f"count={self.count}")
        fields.append(f"excluded={self.excluded}")
        return " ".join(fields)

    def to_json(self) -> str:
        return self.model_dump_json(indent=2) + "\n"


def evaluate_flow(
    est: FlowField,
    gt: FlowField,
    thresholds: Sequence[float],
    valid: Optional[np.ndarray] = None,
    *,
    pair: Optional[str] = None,
    fingerprint: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    errors = _valid_errors(est, gt, valid)
    return EvalReport(
        pair=pair,
        aepe=pairwise_mean(errors),
        pck={float(tau): percentage_below(errors, tau) for tau in thresholds},
        count=int(errors.size),
        fingerprint=dict(fingerprint or {}),
    )


def evaluate_homography(
    H: Union[np.ndarray, HomographyArray],
    gt_pairs: Sequence[Correspondence],
    thresholds: Sequence[float],
    *,
    pair: Optional[str] = None,
    fingerprint: Optional[Dict[str, Any]] = None,
) -> EvalReport:
    errors, excluded = point_errors(H, gt_pairs)
    if errors.size == 0:
        raise DegenerateProjectionError("every ground-truth point hits a degenerate projection", excluded=excluded)
    return EvalReport(
        pair=pair,
        pme=pairwise_mean(errors),
        pck_points={float(tau): percentage_below(errors, tau) for tau in thresholds},
        count=int(errors.size),
        excluded=excluded,
        fingerprint=dict(fingerprint or {}),
    )


def merge_reports(flow: Optional[EvalReport], homography: Optional[EvalReport]) -> EvalReport:
    if flow is None and homography is None:
        raise ArgumentError("nothing to merge")
    base = flow or homography
    assert base is not None
    update: Dict[str, Any] = {}
    if flow is not None and homography is not None:
        update = {
            "pme": homography.pme,
            "pck_points": homography.pck_points,
            "excluded": homography.excluded,
        }
    return base.model_copy(update=update)


def summarize_reports(reports: Iterable[EvalReport], fingerprint: Optional[Dict[str, Any]] = None) -> EvalReport:
    """Per-metric mean over pairs (pairwise-summed); counts are totals."""
    items = list(reports)
    if not items:
        raise ArgumentError("no reports to summarize")

    def mean_of(values: List[Optional[float]]) -> Optional[float]:
        present = [v for v in values if v is not None]
        return pairwise_mean(np.array(present)) if present else None

    def table_mean(tables: List[Dict[float, float]]) -> Dict[float, float]:
        keys = sorted(set().union(*tables)) if tables else []
        out: Dict[float, float] = {}
        for tau in keys:
            present = [t[tau] for t in tables if tau in t]
            out[tau] = min(100.0, pairwise_mean(np.array(present)))
        return out

    return EvalReport(
        pair="mean",
        aepe=mean_of([r.aepe for r in items]),
        pck=table_mean([r.pck for r in items if r.pck]),
        pme=mean_of([r.pme for r in items]),
        pck_points=table_mean([r.pck_points for r in items if r.pck_points]),
        count=sum(r.count for r in items),
        excluded=sum(r.excluded for r in items),
        fingerprint=dict(fingerprint or items[0].fingerprint),
    )


__all__ = [
    "pairwise_sum",
    "pairwise_mean",
    "error_heatmap",
    "aepe",
    "pck",
    "percentage_below",
    "point_errors",
    "pme",
    "pme_details",
    "pck_points",
    "EvalReport",
    "evaluate_flow",
    "evaluate_homography",
    "merge_reports",
    "summarize_reports",
]
