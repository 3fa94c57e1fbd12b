"""Self-guided fusion of gyro fields and image-derived residual flow.

Pyramid level 1 is full resolution and level L the coarsest; level i is
downsampled by 2^(i-1). Levels 1-4 each own a pair of bounds from the β
ladder: the fusion map at level i lies in [β_{i+1}, β_i], so coarse levels
can give the residual flow at most a small weight and fine levels a large
one. Deeper levels pass the gyro field through.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage
from scipy.special import expit

from .core_math import CameraIntrinsics
from .errors import ArgumentError
from .formats.images import to_luma
from .gyro_field import downscale_field, homography_array_to_field, upscale_field, warp_image
from .local_flow import LocalFlowParams, estimate_residual_flow, photometric_error
from .types import FlowField, FusionMap, HomographyArray

logger = logging.getLogger(__name__)

SCORE_OFFSET = 4.0
SCORE_CLIP = 30.0
LADDER_SIZE = 5

FusionMode = Literal["sgf", "no_map", "dwi"]


DEFAULT_LADDER = (1.0, 0.9, 0.7, 0.5, 0.3)


def check_beta_ladder(values: Tuple[float, ...]) -> Tuple[float, ...]:
    if any(not 0.0 <= b <= 1.0 for b in values):
        raise ValueError("every beta must lie in [0, 1]")
    if not all(values[k] >= values[k + 1] for k in range(3)):
        raise ValueError("beta ladder must satisfy b1 >= b2 >= b3 >= b4")
    if not values[4] < values[3]:
        raise ValueError("beta ladder must satisfy b5 < b4")
    return values


class BetaLadder(BaseModel):
    """Upper gyro-field weights per level: β₅ < β₄ ≤ β₃ ≤ β₂ ≤ β₁ ≤ 1."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    values: Tuple[float, float, float, float, float] = DEFAULT_LADDER

    @field_validator("values")
    @classmethod
    def _ordered(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        return check_beta_ladder(values)

    @property
    def max_level(self) -> int:
        return LADDER_SIZE - 1

    def bounds(self, level: int) -> Tuple[float, float]:
        """(lower, upper) = (β_{i+1}, β_i) for level i."""
        if not 1 <= level <= self.max_level:
            raise ArgumentError("level has no beta pair", level=level, max_level=self.max_level)
        return self.values[level], self.values[level - 1]


class PyramidLevels(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    count: int = Field(default=5, ge=2)

    def factor(self, level: int) -> int:
        return 2 ** (level - 1)

    def check(self, width: int, height: int) -> None:
        step = self.factor(self.count)
        if width % step or height % step:
            raise ArgumentError(
                "image dims must be divisible by 2^(L-1)", width=width, height=height, levels=self.count, divisor=step
            )

    def dims(self, width: int, height: int) -> List[Tuple[int, int]]:
        """(width, height) for levels 1..L."""
        self.check(width, height)
        return [(width // self.factor(i), height // self.factor(i)) for i in range(1, self.count + 1)]


class FusionParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    beta_ladder: Tuple[float, float, float, float, float] = DEFAULT_LADDER
    gamma: Tuple[float, float] = (-0.2, 0.2)
    pyramid_levels: int = Field(default=5, ge=2)
    residual_sigma: float = Field(default=2.0, gt=0.0)
    residual_window: int = Field(default=7, ge=1)
    mode: FusionMode = "sgf"

    @field_validator("beta_ladder")
    @classmethod
    def _ladder(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        return check_beta_ladder(values)

    @model_validator(mode="after")
    def _gamma(self) -> "FusionParams":
        low, high = self.gamma
        if not low <= 0.0 <= high:
            raise ValueError("gamma must satisfy gamma_minus <= 0 <= gamma_plus")
        return self

    def ladder(self) -> BetaLadder:
        return BetaLadder(values=self.beta_ladder)

    def levels(self) -> PyramidLevels:
        return PyramidLevels(count=self.pyramid_levels)


def _same_shape(**grids: Tuple[int, int]) -> None:
    shapes = set(grids.values())
    if len(shapes) > 1:
        raise ArgumentError("dimension mismatch", **{name: shape for name, shape in grids.items()})


def align_to_frame_a(img_a: np.ndarray, img_b: np.ndarray, G: FlowField) -> np.ndarray:
    """Luma of b sampled at p + G(p); samples outside frame b fall back to a(p)."""
    a = to_luma(img_a)
    b = to_luma(img_b)
    _same_shape(img_a=a.shape, img_b=b.shape, field=G.shape)
    aligned, valid = warp_image(b, G)
    return np.where(valid, aligned, a)


def photometric_residual(img_a: np.ndarray, img_b: np.ndarray, G: FlowField, window: int = 7) -> np.ndarray:
    """Box mean of |a(p) - b(p + G(p))| on 0-255 luma; warp-invalid pixels count as aligned."""
    diff = np.abs(to_luma(img_a) - align_to_frame_a(img_a, img_b, G))
    return ndimage.uniform_filter(diff, size=window, mode="nearest")


def residual_score(mean_residual: np.ndarray, sigma: float) -> np.ndarray:
    """h = 4 - r/σ: aligned pixels score +4 (gyro-favouring), large residuals go negative."""
    return np.clip(SCORE_OFFSET - np.asarray(mean_residual) / sigma, -SCORE_CLIP, SCORE_CLIP)


def constrain_map(raw: np.ndarray, level: int, ladder: BetaLadder) -> FusionMap:
    h = np.asarray(raw, dtype=np.float64)
    lower, upper = ladder.bounds(level)
    if not np.all(np.isfinite(h)):
        raise ArgumentError("raw score must be finite", level=level)
    values = upper + (lower - upper) * expit(h)
    return FusionMap(np.clip(values, lower, upper), level, lower, upper)


def estimate_fusion_map(
    img_a: np.ndarray,
    img_b: np.ndarray,
    G: FlowField,
    level: int,
    ladder: BetaLadder,
    *,
    sigma: float = 2.0,
    window: int = 7,
) -> FusionMap:
    mean_residual = photometric_residual(img_a, img_b, G, window)
    return constrain_map(residual_score(mean_residual, sigma), level, ladder)


def refine_fusion_map(
    M: FusionMap,
    img_a_masked: np.ndarray,
    img_b_masked: np.ndarray,
    gamma: Tuple[float, float],
    *,
    sigma: float = 2.0,
    window: int = 7,
) -> FusionMap:
    """clamp(M + M', 0, 1) with M' ∈ [γ−, γ+] driven by the masked-image residual.

    The residual is centred on its median, so uniformly aligned inputs give
    M' = 0 and only locally worse-than-typical pixels gain residual weight.
    """
    gamma_minus, gamma_plus = gamma
    if gamma_minus > gamma_plus:
        raise ArgumentError("gamma_minus exceeds gamma_plus", gamma_minus=gamma_minus, gamma_plus=gamma_plus)
    if not gamma_minus <= 0.0 <= gamma_plus:
        raise ArgumentError("gamma must bracket zero", gamma_minus=gamma_minus, gamma_plus=gamma_plus)
    a = to_luma(img_a_masked)
    b = to_luma(img_b_masked)
    _same_shape(map=M.shape, img_a=a.shape, img_b=b.shape)

    mean_residual = ndimage.uniform_filter(np.abs(a - b), size=window, mode="nearest")
    z = (mean_residual - np.median(mean_residual)) / sigma
    delta = np.where(z >= 0, gamma_plus * np.tanh(z), -gamma_minus * np.tanh(z))
    lower = max(0.0, M.lower + gamma_minus)
    upper = min(1.0, M.upper + gamma_plus)
    values = np.clip(M.values + delta, lower, upper)
    return FusionMap(values, M.level, lower, upper)


def fuse(O: FlowField, G: FlowField, M: FusionMap) -> FlowField:
    """Ṽ = M·O + (1 − M)·G, element-wise."""
    _same_shape(residual=O.shape, gyro=G.shape, map=M.shape)
    weight = M.values
    return FlowField(weight * O.u + (1.0 - weight) * G.u, weight * O.v + (1.0 - weight) * G.v)


def carried_init(a: np.ndarray, b: np.ndarray, carried: FlowField, G: FlowField, window: int) -> FlowField:
    """Per pixel, whichever of the upsampled coarser flow and the gyro field fits the images better."""
    use_gyro = photometric_error(a, b, G, window) <= photometric_error(a, b, carried, window)
    return FlowField(np.where(use_gyro, G.u, carried.u), np.where(use_gyro, G.v, carried.v))


def _level_image(luma: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return luma
    h, w = luma.shape[0] // factor, luma.shape[1] // factor
    return luma.reshape(h, factor, w, factor).mean(axis=(1, 3))


@dataclass(frozen=True)
class FusionResult:
    flow: FlowField
    maps: Dict[int, FusionMap] = field(default_factory=dict)
    gyro_field: Optional[FlowField] = None


def run_fusion_pyramid(
    img_a: np.ndarray,
    img_b: np.ndarray,
    gyro: HomographyArray,
    K: Optional[CameraIntrinsics],
    ladder: BetaLadder,
    levels: PyramidLevels,
    *,
    residual_sigma: float = 2.0,
    residual_window: int = 7,
    mode: FusionMode = "sgf",
    local: Optional[LocalFlowParams] = None,
    gyro_field: Optional[FlowField] = None,
) -> FusionResult:
    """Coarse-to-fine fusion; returns the full-resolution fused flow and the per-level maps.

    ``gyro_field`` replaces the rasterised array when the caller already holds
    the full-resolution field (padded inputs, for instance).

    At each level the gyro field is rasterised at full resolution and
    downscaled, the map is estimated from the photometric residual under
    it, the residual flow is refined from the upsampled previous fused
    flow (or the gyro field where that fits better), and the two are fused.
    """
    a = to_luma(img_a)
    b = to_luma(img_b)
    height, width = a.shape
    _same_shape(img_a=a.shape, img_b=b.shape)
    levels.check(width, height)
    local = local or LocalFlowParams()

    if gyro_field is None:
        gyro_full = homography_array_to_field(gyro, K, width, height)
    else:
        _same_shape(img_a=a.shape, gyro_field=gyro_field.shape)
        gyro_full = gyro_field
    if mode == "dwi":
        flow = estimate_residual_flow(a, b, gyro_full, local.model_copy(update={"levels": levels.count}))
        return FusionResult(flow, {}, gyro_full)

    single_level = local.model_copy(update={"levels": 1})
    maps: Dict[int, FusionMap] = {}
    fused: Optional[FlowField] = None
    for level in range(levels.count, 0, -1):
        factor = levels.factor(level)
        G = downscale_field(gyro_full, factor)
        if level > ladder.max_level:
            logger.debug("level %d has no beta pair; passing the gyro field through", level)
            fused = G
            continue
        a_level = _level_image(a, factor)
        b_level = _level_image(b, factor)
        init = G if fused is None else carried_init(a_level, b_level, upscale_field(fused, 2), G, local.window)
        O = estimate_residual_flow(a_level, b_level, init, single_level)
        if mode == "no_map":
            M = FusionMap(np.ones(G.shape), level, 1.0, 1.0)
        else:
            M = estimate_fusion_map(a_level, b_level, G, level, ladder, sigma=residual_sigma, window=residual_window)
        maps[level] = M
        fused = fuse(O, G, M)
        logger.debug("level %d fused at %dx%d, mean map %.4f", level, G.width, G.height, float(M.values.mean()))
    assert fused is not None
    return FusionResult(fused, maps, gyro_full)


def run_fusion(
    img_a: np.ndarray,
    img_b: np.ndarray,
    gyro: HomographyArray,
    K: Optional[CameraIntrinsics],
    params: FusionParams,
    local: Optional[LocalFlowParams] = None,
    gyro_field: Optional[FlowField] = None,
) -> FusionResult:
    return run_fusion_pyramid(
        img_a,
        img_b,
        gyro,
        K,
        params.ladder(),
        params.levels(),
        residual_sigma=params.residual_sigma,
        residual_window=params.residual_window,
        mode=params.mode,
        local=local,
        gyro_field=gyro_field,
    )


def zero_flow(width: int, height: int) -> FlowField:
    return FlowField.zeros(width, height)


def gyro_only_flow(gyro: HomographyArray, K: Optional[CameraIntrinsics], width: int, height: int) -> FlowField:
    return homography_array_to_field(gyro, K, width, height)


def residual_only_flow(
    img_a: np.ndarray,
    img_b: np.ndarray,
    levels: PyramidLevels,
    local: Optional[LocalFlowParams] = None,
) -> FlowField:
    """Local flow from a zero initialisation with the same pyramid depth as the fusion."""
    a = to_luma(img_a)
    params = (local or LocalFlowParams()).model_copy(update={"levels": levels.count})
    return estimate_residual_flow(a, img_b, zero_flow(a.shape[1], a.shape[0]), params)


__all__ = [
    "DEFAULT_LADDER",
    "check_beta_ladder",
    "BetaLadder",
    "PyramidLevels",
    "FusionParams",
    "FusionMode",
    "FusionResult",
    "align_to_frame_a",
    "photometric_residual",
    "residual_score",
    "constrain_map",
    "estimate_fusion_map",
    "refine_fusion_map",
    "fuse",
    "carried_init",
    "run_fusion_pyramid",
    "run_fusion",
    "zero_flow",
    "gyro_only_flow",
    "residual_only_flow",
]
