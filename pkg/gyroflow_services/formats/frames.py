"""Frame index v1: ``frames_v1`` header, then ``frame_id,timestamp_ns,path`` rows.

Paths are stored relative to the index file and may contain commas (the
path is the remainder of the row).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

from ..errors import ArgumentError, FormatError, OrderingError
from .gyro_log import content_lines, decode_text, parse_int

HEADER = "frames_v1"


@dataclass(frozen=True)
class FrameRecord:
    frame_id: int
    timestamp_ns: int
    path: str


@dataclass(frozen=True)
class FrameIndex:
    frames: Tuple[FrameRecord, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        frames = tuple(self.frames)
        for previous, current in zip(frames, frames[1:]):
            if current.timestamp_ns <= previous.timestamp_ns:
                raise OrderingError(
                    "frame timestamps must strictly increase",
                    frame_id=current.frame_id,
                    timestamp=current.timestamp_ns,
                )
        ids = [record.frame_id for record in frames]
        if len(set(ids)) != len(ids):
            raise ArgumentError("frame ids must be unique")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[FrameRecord]:
        return iter(self.frames)

    def by_id(self, frame_id: int) -> FrameRecord:
        for record in self.frames:
            if record.frame_id == frame_id:
                return record
        raise ArgumentError("unknown frame id", frame_id=frame_id)

    def consecutive_pairs(self) -> List[Tuple[FrameRecord, FrameRecord]]:
        return list(zip(self.frames, self.frames[1:]))


def parse_frame_index(data: Union[str, bytes], source: Optional[str] = None) -> FrameIndex:
    text = decode_text(data, source)
    lines = content_lines(text)
    first = next(lines, None)
    if first is None or first[1] != HEADER:
        raise FormatError("missing frames_v1 header", file=source, line=first[0] if first else 1)

    records: List[FrameRecord] = []
    seen = set()
    for number, content in lines:
        parts = content.split(",", 2)
        if len(parts) != 3 or not parts[2].strip():
            raise FormatError("expected frame_id,timestamp_ns,path", file=source, line=number)
        frame_id = parse_int(parts[0], line=number, field="frame_id", source=source)
        ts = parse_int(parts[1], line=number, field="timestamp_ns", source=source)
        if records and ts <= records[-1].timestamp_ns:
            raise OrderingError("frame timestamps must strictly increase", file=source, line=number, timestamp=ts)
        if frame_id in seen:
            raise FormatError("duplicate frame id", file=source, line=number, frame_id=frame_id)
        seen.add(frame_id)
        records.append(FrameRecord(frame_id, ts, parts[2].strip()))
    return FrameIndex(tuple(records))


def write_frame_index(index: FrameIndex) -> str:
    rows = [HEADER] + [f"{r.frame_id},{r.timestamp_ns},{r.path}" for r in index]
    return "\n".join(rows) + "\n"


def read_frame_index(path: Union[str, Path]) -> FrameIndex:
    target = Path(path)
    try:
        data = target.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read frame index: {exc}", file=str(target)) from exc
    return parse_frame_index(data, str(target))


__all__ = ["FrameRecord", "FrameIndex", "parse_frame_index", "write_frame_index", "read_frame_index"]
