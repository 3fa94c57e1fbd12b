"""Homography array v1.

    homography_v1
    <width>,<height>,<patch_count>
    h00,h01,h02,h10,h11,h12,h20,h21,h22      # one row per patch, top first
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Union

import numpy as np

from ..errors import FormatError, GyroflowError
from ..types import HomographyArray
from .gyro_log import content_lines, decode_text, parse_float, parse_int

HEADER = "homography_v1"


def parse_homography_array(data: Union[str, bytes], source: Optional[str] = None) -> HomographyArray:
    text = decode_text(data, source)
    lines = content_lines(text)
    first = next(lines, None)
    if first is None or first[1] != HEADER:
        raise FormatError("missing homography_v1 header", file=source, line=first[0] if first else 1)
    shape_line = next(lines, None)
    if shape_line is None:
        raise FormatError("missing width,height,patch_count row", file=source, line=first[0] + 1)
    number, content = shape_line
    dims = content.split(",")
    if len(dims) != 3:
        raise FormatError("expected width,height,patch_count", file=source, line=number)
    width, height, count = (parse_int(p, line=number, field=f, source=source) for p, f in zip(dims, ("width", "height", "patch_count")))
    if count < 1 or width < 1 or height < 1 or count > height:
        raise FormatError("invalid array dimensions", file=source, line=number, width=width, height=height, patch_count=count)

    rows = []
    for number, content in lines:
        parts = content.split(",")
        if len(parts) != 9:
            raise FormatError("expected 9 homography entries", file=source, line=number, fields=len(parts))
        rows.append([parse_float(p, line=number, field="entry", source=source) for p in parts])
        if len(rows) > count:
            raise FormatError("more patches than declared", file=source, line=number, patch_count=count)
    if len(rows) != count:
        raise FormatError("fewer patches than declared", file=source, patch_count=count, found=len(rows))
    try:
        return HomographyArray(np.array(rows, dtype=np.float64).reshape(count, 3, 3), width, height)
    except GyroflowError as exc:
        raise FormatError(f"invalid homography: {exc}", **{**exc.context, "file": source}) from exc


def write_homography_array(arr: HomographyArray) -> str:
    rows = [HEADER, f"{arr.width},{arr.height},{arr.patch_count}"]
    for H in arr.homographies:
        rows.append(",".join(repr(float(value)) for value in H.reshape(-1)))
    return "\n".join(rows) + "\n"


def read_homography_array(path: Union[str, Path]) -> HomographyArray:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read homography array: {exc}", file=str(target)) from exc
    return parse_homography_array(data, str(target))


__all__ = ["parse_homography_array", "write_homography_array", "read_homography_array"]
