"""8-bit grayscale / RGB raster images via Pillow, plus luma and pad helpers.

Luma uses BT.601 weights: Y = 0.299 R + 0.587 G + 0.114 B.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import ArgumentError, FormatError

BT601 = np.array([0.299, 0.587, 0.114], dtype=np.float64)
SUPPORTED_MODES = ("L", "RGB")

PathLike = Union[str, Path]


def to_luma(img: np.ndarray) -> np.ndarray:
    """Float64 luma grid of a grayscale or RGB image (values stay on the 0-255 scale)."""
    image = np.asarray(img, dtype=np.float64)
    if image.ndim == 2:
        return image
    if image.ndim == 3 and image.shape[2] == 3:
        return image @ BT601
    raise ArgumentError("expected a grayscale or RGB image", shape=image.shape)


def luma_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(to_luma(img)), 0, 255).astype(np.uint8)


def decode_image(data: bytes, source: str | None = None) -> np.ndarray:
    try:
        with Image.open(io.BytesIO(data)) as handle:
            handle.load()
            if handle.mode == "P":
                handle = handle.convert("RGB")
            if handle.mode not in SUPPORTED_MODES:
                raise FormatError("unsupported image mode", file=source, mode=handle.mode)
            return np.array(handle, dtype=np.uint8)
    except FormatError:
        raise
    except (UnidentifiedImageError, OSError, ValueError, SyntaxError) as exc:
        raise FormatError(f"unreadable image: {exc}", file=source) from exc


def load_image(path: PathLike) -> np.ndarray:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read image: {exc}", file=str(target)) from exc
    return decode_image(data, str(target))


def encode_image(img: np.ndarray) -> bytes:
    array = np.asarray(img)
    if array.dtype != np.uint8:
        raise ArgumentError("images are stored as 8-bit", dtype=str(array.dtype))
    if not (array.ndim == 2 or (array.ndim == 3 and array.shape[2] == 3)):
        raise ArgumentError("expected a grayscale or RGB image", shape=array.shape)
    buffer = io.BytesIO()
    Image.fromarray(array).save(buffer, format="PNG")
    return buffer.getvalue()


def save_image(path: PathLike, img: np.ndarray) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(encode_image(img))
    return target


def pad_to_multiple(img: np.ndarray, multiple: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Symmetric-pad the bottom and right edges so both dims divide ``multiple``.

    Returns the padded image and the (rows, columns) added.
    """
    array = np.asarray(img)
    pad_rows = (-array.shape[0]) % multiple
    pad_cols = (-array.shape[1]) % multiple
    if not pad_rows and not pad_cols:
        return array, (0, 0)
    widths = [(0, pad_rows), (0, pad_cols)] + [(0, 0)] * (array.ndim - 2)
    return np.pad(array, widths, mode="symmetric"), (pad_rows, pad_cols)


def crop_to(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    return np.asarray(grid)[:height, :width]


__all__ = [
    "BT601",
    "to_luma",
    "luma_uint8",
    "decode_image",
    "load_image",
    "encode_image",
    "save_image",
    "pad_to_multiple",
    "crop_to",
]
