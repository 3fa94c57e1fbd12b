"""Coarse-to-fine window least-squares flow refinement around an initial field.

The solver refines a residual on top of ``init``: the coarsest level starts
from a zero residual, each level adds warped-and-linearised updates, and the
residual is carried to the next finer level. An update is taken at a pixel
only when it lowers the windowed photometric error there, and the finished
field replaces ``init`` only where it fits the images better than ``init``
does. Pixels whose local structure tensor is ill-conditioned at full
resolution keep ``init``.
"""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import ndimage

from .errors import ArgumentError
from .formats.images import to_luma
from .gyro_field import downscale_field, upscale_field, warp_image
from .types import FlowField

logger = logging.getLogger(__name__)

MIN_LEVEL_SIZE = 8
EIGEN_FLOOR = 1e-9
WARP_ORDER = 3


class LocalFlowParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    window: int = Field(default=21, ge=3)
    iterations: int = Field(default=3, ge=1)
    cond_cutoff: float = Field(default=1e4, gt=1.0)
    levels: int = Field(default=3, ge=1)
    presmooth_sigma: float = Field(default=1.0, ge=0.0)
    tolerance: float = Field(default=1e-3, gt=0.0)

    @field_validator("window")
    @classmethod
    def _odd_window(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("window must be odd")
        return value


def _block_mean(image: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return image
    h, w = image.shape[0] // factor, image.shape[1] // factor
    return image.reshape(h, factor, w, factor).mean(axis=(1, 3))


def usable_levels(width: int, height: int, requested: int) -> int:
    """Deepest pyramid (≤ requested) whose every level divides evenly and stays ≥ 8 px."""
    levels = 1
    while levels < requested:
        factor = 2**levels
        if width % factor or height % factor or min(width, height) // factor < MIN_LEVEL_SIZE:
            break
        levels += 1
    return levels


def structure_tensor(gx: np.ndarray, gy: np.ndarray, window: int):
    sxx = ndimage.uniform_filter(gx * gx, size=window, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, size=window, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, size=window, mode="nearest")
    return sxx, sxy, syy


def well_conditioned(sxx: np.ndarray, sxy: np.ndarray, syy: np.ndarray, cond_cutoff: float) -> np.ndarray:
    half_trace = 0.5 * (sxx + syy)
    spread = np.sqrt(np.maximum(0.25 * (sxx - syy) ** 2 + sxy**2, 0.0))
    lam_max = half_trace + spread
    lam_min = half_trace - spread
    return (lam_min > EIGEN_FLOOR) & (lam_max <= cond_cutoff * np.maximum(lam_min, EIGEN_FLOOR))


def window_error(a: np.ndarray, warped: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    """Box mean of (warped − a)² over in-frame samples; inf where a window holds none."""
    weight = valid.astype(np.float64)
    total = ndimage.uniform_filter(weight * (warped - a) ** 2, size=window, mode="nearest")
    count = ndimage.uniform_filter(weight, size=window, mode="nearest")
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(count > 0.5 / window**2, total / count, np.inf)


def photometric_error(a: np.ndarray, b: np.ndarray, flow: FlowField, window: int) -> np.ndarray:
    warped, valid = warp_image(b, flow, order=WARP_ORDER)
    return window_error(a, warped, valid, window)


def _refine_level(a: np.ndarray, b: np.ndarray, flow: FlowField, params: LocalFlowParams) -> FlowField:
    u, v = flow.u.copy(), flow.v.copy()
    grad_ay, grad_ax = np.gradient(a)
    warped, valid = warp_image(b, flow, order=WARP_ORDER)
    error = window_error(a, warped, valid, params.window)
    for _ in range(params.iterations):
        grad_by, grad_bx = np.gradient(warped)
        gx = np.where(valid, 0.5 * (grad_ax + grad_bx), 0.0)
        gy = np.where(valid, 0.5 * (grad_ay + grad_by), 0.0)
        it = np.where(valid, warped - a, 0.0)

        sxx, sxy, syy = structure_tensor(gx, gy, params.window)
        sxt = ndimage.uniform_filter(gx * it, size=params.window, mode="nearest")
        syt = ndimage.uniform_filter(gy * it, size=params.window, mode="nearest")
        ok = well_conditioned(sxx, sxy, syy, params.cond_cutoff)
        det = np.where(ok, sxx * syy - sxy * sxy, 1.0)
        du = np.where(ok, (-syy * sxt + sxy * syt) / det, 0.0)
        dv = np.where(ok, (sxy * sxt - sxx * syt) / det, 0.0)

        next_u, next_v = u + du, v + dv
        next_warped, next_valid = warp_image(b, FlowField(next_u, next_v), order=WARP_ORDER)
        accept = window_error(a, next_warped, next_valid, params.window) < error
        if not accept.any():
            break
        # warping is pointwise, so the accepted samples can be spliced in
        u = np.where(accept, next_u, u)
        v = np.where(accept, next_v, v)
        warped = np.where(accept, next_warped, warped)
        valid = np.where(accept, next_valid, valid)
        error = window_error(a, warped, valid, params.window)
        if float(np.max(np.hypot(du, dv)[accept])) < params.tolerance:
            break
    return FlowField(u, v)


def estimate_residual_flow(
    img_a: np.ndarray,
    img_b: np.ndarray,
    init: FlowField,
    params: LocalFlowParams | None = None,
) -> FlowField:
    params = params or LocalFlowParams()
    a = to_luma(img_a)
    b = to_luma(img_b)
    if a.shape != b.shape or a.shape != init.shape:
        raise ArgumentError(
            "image and initial-field dimensions differ",
            img_a_shape=a.shape,
            img_b_shape=b.shape,
            init_shape=init.shape,
        )
    if params.presmooth_sigma > 0:
        a = ndimage.gaussian_filter(a, params.presmooth_sigma, mode="nearest")
        b = ndimage.gaussian_filter(b, params.presmooth_sigma, mode="nearest")

    levels = usable_levels(init.width, init.height, params.levels)
    if levels < params.levels:
        logger.debug("local flow pyramid limited to %d of %d levels for %dx%d", levels, params.levels, init.width, init.height)

    residual = None
    for level in reversed(range(levels)):
        factor = 2**level
        base = downscale_field(init, factor)
        if residual is None:
            residual = FlowField.zeros(base.width, base.height)
        current = FlowField(base.u + residual.u, base.v + residual.v)
        refined = _refine_level(_block_mean(a, factor), _block_mean(b, factor), current, params)
        residual = FlowField(refined.u - base.u, refined.v - base.v)
        if level:
            residual = upscale_field(residual, 2)

    refined = FlowField(init.u + residual.u, init.v + residual.v)
    gy, gx = np.gradient(a)
    keep = well_conditioned(*structure_tensor(gx, gy, params.window), params.cond_cutoff)
    keep &= photometric_error(a, b, refined, params.window) < photometric_error(a, b, init, params.window)
    logger.debug("local flow replaced init at %d of %d pixels", int(keep.sum()), keep.size)
    return FlowField(np.where(keep, refined.u, init.u), np.where(keep, refined.v, init.v))


__all__ = [
    "LocalFlowParams",
    "usable_levels",
    "structure_tensor",
    "well_conditioned",
    "window_error",
    "photometric_error",
    "estimate_residual_flow",
]
