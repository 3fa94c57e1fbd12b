"""Middlebury ``.flo`` flow files.

Layout (little-endian): float32 tag 202021.25, int32 width, int32 height,
then ``height * width`` interleaved float32 (u, v) pairs in row-major order.
Components with magnitude above 1e9 mark unlabeled pixels; they populate the
field's validity mask on read and are written back as 1e10.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np

from ..errors import FormatError, LengthError
from ..types import FlowField

TAG_FLOAT = 202021.25
HEADER_BYTES = 12
UNKNOWN_FLOW_THRESHOLD = 1e9
UNKNOWN_FLOW = 1e10
MAX_DIMENSION = 1 << 20


def read_flo(data: bytes, source: str | None = None) -> FlowField:
    payload = bytes(data)
    if len(payload) < HEADER_BYTES:
        raise LengthError("flow file shorter than its header", file=source, size=len(payload))
    tag = np.frombuffer(payload, dtype="<f4", count=1)[0]
    if tag != np.float32(TAG_FLOAT):
        raise FormatError("bad flow file tag", file=source, tag=repr(float(tag)))
    width, height = (int(v) for v in np.frombuffer(payload, dtype="<i4", count=2, offset=4))
    if not (0 < width <= MAX_DIMENSION and 0 < height <= MAX_DIMENSION):
        raise FormatError("invalid flow file dimensions", file=source, width=width, height=height)
    expected = HEADER_BYTES + 8 * width * height
    if len(payload) != expected:
        raise LengthError("flow payload size does not match its header", file=source, expected=expected, size=len(payload))

    uv = np.frombuffer(payload, dtype="<f4", offset=HEADER_BYTES).reshape(height, width, 2).astype(np.float64)
    with np.errstate(invalid="ignore"):
        unknown = ~(np.abs(uv) <= UNKNOWN_FLOW_THRESHOLD).all(axis=-1)
    if unknown.any():
        uv = np.where(unknown[..., None], 0.0, uv)
        return FlowField(uv[..., 0], uv[..., 1], valid=~unknown)
    return FlowField(uv[..., 0], uv[..., 1])


def write_flo(f: FlowField) -> bytes:
    uv = f.stack().astype("<f4")
    if f.valid is not None:
        uv[~f.valid] = UNKNOWN_FLOW
    header = np.array([TAG_FLOAT], dtype="<f4").tobytes() + np.array([f.width, f.height], dtype="<i4").tobytes()
    return header + np.ascontiguousarray(uv).tobytes()


def load_flo(path: Union[str, Path]) -> FlowField:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read flow file: {exc}", file=str(target)) from exc
    return read_flo(data, str(target))


def save_flo(path: Union[str, Path], f: FlowField) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(write_flo(f))
    return target


__all__ = ["TAG_FLOAT", "UNKNOWN_FLOW_THRESHOLD", "read_flo", "write_flo", "load_flo", "save_flo"]
