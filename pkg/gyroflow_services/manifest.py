"""Run manifests written next to every output set.

A manifest records the command line, the fully resolved configuration and
the produced files; it carries no timestamps so re-runs are byte-identical.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import __version__
from .errors import FormatError

MANIFEST_NAME = "manifest.json"


class RunManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tool: str = "gyroflow"
    version: str = __version__
    subcommand: str
    argv: List[str] = Field(default_factory=list)
    inputs: Dict[str, str] = Field(default_factory=dict)
    config_path: Optional[str] = None
    config: Optional[Dict[str, Any]] = None
    overrides: List[str] = Field(default_factory=list)
    output_dir: str
    parameters: Dict[str, Any] = Field(default_factory=dict)
    outputs: List[str] = Field(default_factory=list)
    warnings: List[str] = Field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(), indent=2, sort_keys=True, allow_nan=True) + "\n"


def relative_outputs(paths: List[Path], root: Path) -> List[str]:
    rels = []
    for path in paths:
        try:
            rels.append(Path(path).resolve().relative_to(root.resolve()).as_posix())
        except ValueError:
            rels.append(Path(path).as_posix())
    return sorted(set(rels))


def write_manifest(manifest: RunManifest, out_dir: Union[str, Path]) -> Path:
    target = Path(out_dir) / MANIFEST_NAME
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(manifest.to_json(), encoding="utf-8")
    return target


def read_manifest(path: Union[str, Path]) -> RunManifest:
    target = Path(path)
    if target.is_dir():
        target = target / MANIFEST_NAME
    try:
        raw = json.loads(target.read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest: {exc}", file=str(target)) from exc
    try:
        return RunManifest.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        raise FormatError(
            "invalid manifest",
            file=str(target),
            field=".".join(str(part) for part in first.get("loc", ())),
            constraint=first.get("msg"),
        ) from exc


__all__ = ["MANIFEST_NAME", "RunManifest", "relative_outputs", "write_manifest", "read_manifest"]
