"""Gyro log v1: a ``gyro_v1,rad_s[,clock]`` header, then ``timestamp_ns,wx,wy,wz`` rows.

Blank lines and ``#`` comments (whole-line or trailing) are ignored. Timestamps
are non-negative integers in nanoseconds and must strictly increase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

import numpy as np

from ..core_math import GyroSample
from ..errors import ArgumentError, FormatError, OrderingError

HEADER = "gyro_v1"
UNITS = "rad_s"
INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class GyroLog:
    timestamps: np.ndarray
    omegas: np.ndarray
    units: str = UNITS
    clock_id: Optional[str] = None

    def __post_init__(self) -> None:
        timestamps = np.asarray(self.timestamps, dtype=np.int64).reshape(-1)
        omegas = np.asarray(self.omegas, dtype=np.float64).reshape(-1, 3)
        if timestamps.size != omegas.shape[0]:
            raise ArgumentError("timestamp and rate counts differ", timestamps=timestamps.size, rates=omegas.shape[0])
        if timestamps.size and timestamps[0] < 0:
            raise ArgumentError("timestamps must be non-negative", first=int(timestamps[0]))
        steps = np.diff(timestamps)
        if np.any(steps <= 0):
            index = int(np.flatnonzero(steps <= 0)[0]) + 1
            raise OrderingError("timestamps must strictly increase", sample=index, timestamp=int(timestamps[index]))
        if not np.all(np.isfinite(omegas)):
            raise ArgumentError("angular rates must be finite")
        if self.units != UNITS:
            raise ArgumentError("unsupported units", units=self.units)
        object.__setattr__(self, "timestamps", timestamps)
        object.__setattr__(self, "omegas", omegas)

    @classmethod
    def from_samples(cls, samples: List[GyroSample], clock_id: Optional[str] = None) -> "GyroLog":
        return cls(
            np.array([s.timestamp for s in samples], dtype=np.int64),
            np.array([s.omega for s in samples], dtype=np.float64).reshape(-1, 3),
            clock_id=clock_id,
        )

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def __iter__(self) -> Iterator[GyroSample]:
        for ts, omega in zip(self.timestamps, self.omegas):
            yield GyroSample((float(omega[0]), float(omega[1]), float(omega[2])), int(ts))

    def span(self) -> Tuple[int, int]:
        if not len(self):
            raise ArgumentError("empty gyro log")
        return int(self.timestamps[0]), int(self.timestamps[-1])


def decode_text(data: Union[str, bytes], source: Optional[str] = None) -> str:
    if isinstance(data, str):
        return data
    try:
        return bytes(data).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise FormatError("input is not valid UTF-8", file=source, offset=exc.start) from exc


def content_lines(text: str) -> Iterator[Tuple[int, str]]:
    """(line number, stripped content) for every non-empty, non-comment line."""
    for number, raw in enumerate(text.splitlines(), start=1):
        content = raw.split("#", 1)[0].strip()
        if content:
            yield number, content


def parse_int(token: str, *, line: int, field: str, source: Optional[str]) -> int:
    value = token.strip()
    if not value.isdigit() or not value.isascii() or len(value) > 19:
        raise FormatError(f"{field} must be a non-negative integer", file=source, line=line, value=token[:40])
    number = int(value)
    if number > INT64_MAX:
        raise FormatError(f"{field} does not fit in 64 bits", file=source, line=line, value=token[:40])
    return number


def parse_float(token: str, *, line: int, field: str, source: Optional[str]) -> float:
    try:
        value = float(token)
    except ValueError as exc:
        raise FormatError(f"{field} is not a number", file=source, line=line, value=token[:40]) from exc
    if not math.isfinite(value):
        raise FormatError(f"{field} must be finite", file=source, line=line, value=token[:40])
    return value


def parse_gyro_log(data: Union[str, bytes], source: Optional[str] = None) -> GyroLog:
    text = decode_text(data, source)
    lines = content_lines(text)
    first = next(lines, None)
    if first is None:
        raise FormatError("missing gyro_v1 header", file=source, line=1)
    header_line, header = first
    fields = [part.strip() for part in header.split(",")]
    if len(fields) not in (2, 3) or fields[0] != HEADER or fields[1] != UNITS:
        raise FormatError("missing gyro_v1 header", file=source, line=header_line, expected=f"{HEADER},{UNITS}")
    clock_id = fields[2] if len(fields) == 3 and fields[2] else None

    timestamps: List[int] = []
    omegas: List[Tuple[float, float, float]] = []
    for number, content in lines:
        parts = content.split(",")
        if len(parts) != 4:
            raise FormatError("expected timestamp_ns,wx,wy,wz", file=source, line=number, fields=len(parts))
        ts = parse_int(parts[0], line=number, field="timestamp_ns", source=source)
        omega = tuple(parse_float(p, line=number, field=axis, source=source) for p, axis in zip(parts[1:], ("wx", "wy", "wz")))
        if timestamps and ts <= timestamps[-1]:
            raise OrderingError(
                "timestamps must strictly increase", file=source, line=number, timestamp=ts, previous=timestamps[-1]
            )
        timestamps.append(ts)
        omegas.append(omega)  # type: ignore[arg-type]
    return GyroLog(np.array(timestamps, dtype=np.int64), np.array(omegas, dtype=np.float64).reshape(-1, 3), clock_id=clock_id)


def write_gyro_log(log: GyroLog) -> str:
    header = f"{HEADER},{UNITS}" + (f",{log.clock_id}" if log.clock_id else "")
    rows = [header]
    for ts, omega in zip(log.timestamps, log.omegas):
        rows.append(f"{int(ts)},{float(omega[0])!r},{float(omega[1])!r},{float(omega[2])!r}")
    return "\n".join(rows) + "\n"


def read_gyro_log(path: Union[str, Path]) -> GyroLog:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read gyro log: {exc}", file=str(target)) from exc
    return parse_gyro_log(data, str(target))


__all__ = [
    "GyroLog",
    "decode_text",
    "content_lines",
    "parse_int",
    "parse_float",
    "parse_gyro_log",
    "write_gyro_log",
    "read_gyro_log",
]
