"""Flow and error visualisations as 8-bit images."""

from __future__ import annotations

from typing import Optional

import numpy as np
from PIL import Image

from ..errors import ArgumentError
from ..types import FlowField
from .images import to_luma

HUE_STEPS = 256


def flow_magnitude(f: FlowField) -> np.ndarray:
    return np.hypot(f.u, f.v)


def flow_to_hsv(f: FlowField, max_mag: Optional[float] = None) -> np.ndarray:
    """HSV planes (uint8): hue = atan2(v, u), saturation = |f| / max_mag clamped to 1, value = 255.

    ``max_mag=None`` scales by the largest valid magnitude.
    """
    magnitude = flow_magnitude(f)
    valid = f.validity()
    if max_mag is None:
        max_mag = float(magnitude[valid].max()) if valid.any() else 0.0
    if max_mag < 0:
        raise ArgumentError("max_mag must be non-negative", max_mag=max_mag)
    scale = max_mag if max_mag > 0 else 1.0

    angle = np.arctan2(f.v, f.u)
    hue = np.rint(np.mod(angle, 2 * np.pi) / (2 * np.pi) * HUE_STEPS).astype(np.int64) % HUE_STEPS
    saturation = np.rint(np.clip(magnitude / scale, 0.0, 1.0) * 255)
    value = np.where(valid, 255, 0)
    return np.stack([hue, saturation, value], axis=-1).astype(np.uint8)


def flow_to_color(f: FlowField, max_mag: Optional[float] = None) -> np.ndarray:
    """RGB colour-wheel rendering; zero flow is white, unlabeled pixels are black."""
    hsv = flow_to_hsv(f, max_mag)
    planes = [Image.fromarray(np.ascontiguousarray(hsv[..., c])) for c in range(3)]
    return np.array(Image.merge("HSV", planes).convert("RGB"), dtype=np.uint8)


def heatmap_to_image(grid: np.ndarray, max_value: Optional[float] = None) -> np.ndarray:
    """Grayscale rendering of a non-negative error grid; darker is better."""
    values = np.asarray(grid, dtype=np.float64)
    top = float(values.max()) if max_value is None and values.size else (max_value or 0.0)
    if top <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint(np.clip(values / top, 0.0, 1.0) * 255).astype(np.uint8)


def overlay(img_a: np.ndarray, img_b_aligned: np.ndarray) -> np.ndarray:
    """50/50 blend of frame a and frame b aligned to it (ghosting shows misalignment)."""
    a = to_luma(img_a)
    b = to_luma(img_b_aligned)
    if a.shape != b.shape:
        raise ArgumentError("overlay inputs differ in size", a_shape=a.shape, b_shape=b.shape)
    return np.clip(np.rint(0.5 * a + 0.5 * b), 0, 255).astype(np.uint8)


__all__ = ["flow_magnitude", "flow_to_hsv", "flow_to_color", "heatmap_to_image", "overlay"]
