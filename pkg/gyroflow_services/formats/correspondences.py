"""Correspondence list v1: ``pts_v1`` header, then ``xa,ya,xb,yb[,weight]`` rows."""

from __future__ import annotations

from pathlib import Path
from typing import List, Optional, Sequence, Union

from ..errors import FormatError
from ..types import Correspondence
from .gyro_log import content_lines, decode_text, parse_float

HEADER = "pts_v1"


def parse_correspondences(data: Union[str, bytes], source: Optional[str] = None) -> List[Correspondence]:
    text = decode_text(data, source)
    lines = content_lines(text)
    first = next(lines, None)
    if first is None or first[1] != HEADER:
        raise FormatError("missing pts_v1 header", file=source, line=first[0] if first else 1)

    pairs: List[Correspondence] = []
    for number, content in lines:
        parts = content.split(",")
        if len(parts) not in (4, 5):
            raise FormatError("expected xa,ya,xb,yb[,weight]", file=source, line=number, fields=len(parts))
        names = ("xa", "ya", "xb", "yb", "weight")
        values = [parse_float(p, line=number, field=name, source=source) for p, name in zip(parts, names)]
        weight = values[4] if len(values) == 5 else 1.0
        if weight < 0:
            raise FormatError("weight must be non-negative", file=source, line=number, weight=weight)
        pairs.append(Correspondence((values[0], values[1]), (values[2], values[3]), weight))
    return pairs


def write_correspondences(pairs: Sequence[Correspondence]) -> str:
    rows = [HEADER]
    for c in pairs:
        fields = [float(c.p[0]), float(c.p[1]), float(c.q[0]), float(c.q[1])]
        if c.weight != 1.0:
            fields.append(float(c.weight))
        rows.append(",".join(repr(value) for value in fields))
    return "\n".join(rows) + "\n"


def read_correspondences(path: Union[str, Path]) -> List[Correspondence]:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read correspondences: {exc}", file=str(target)) from exc
    return parse_correspondences(data, str(target))


__all__ = ["parse_correspondences", "write_correspondences", "read_correspondences"]
