"""Project configuration: a tree of strict pydantic models stored as YAML.

Only ``intrinsics`` is required; every other section falls back to its
defaults and is echoed back in full on write.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple, Type, TypeVar, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core_math import AxisRemap, CameraIntrinsics
from .errors import ArgumentError, ConfigError
from .fusion import FusionParams
from .gyro_field import RollingShutterModel
from .local_flow import LocalFlowParams

logger = logging.getLogger(__name__)

ModelT = TypeVar("ModelT", bound=BaseModel)


class HomographyParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    smoothing_lambda: float = Field(default=10.0, ge=0.0)
    stride: int = Field(default=8, ge=1)
    refine_passes: int = Field(default=3, ge=0)
    min_weight: float = Field(default=1e-3, gt=0.0)
    min_gain: float = Field(default=0.1, ge=0.0)
    use_refined_map: bool = True


class EvaluationParams(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    pck_thresholds: Tuple[float, ...] = (1.0, 5.0)

    @field_validator("pck_thresholds")
    @classmethod
    def _positive(cls, values: Tuple[float, ...]) -> Tuple[float, ...]:
        if not values or any(not tau > 0 for tau in values):
            raise ValueError("thresholds must be positive and non-empty")
        return tuple(sorted(values))


class ProjectConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    intrinsics: CameraIntrinsics
    rolling_shutter: RollingShutterModel = Field(default_factory=RollingShutterModel)
    axis_remap: AxisRemap = Field(default_factory=AxisRemap)
    time_offset_ns: int = 0
    frame_period_ns: Optional[int] = Field(default=None, gt=0)
    fusion: FusionParams = Field(default_factory=FusionParams)
    local_flow: LocalFlowParams = Field(default_factory=LocalFlowParams)
    homography: HomographyParams = Field(default_factory=HomographyParams)
    evaluation: EvaluationParams = Field(default_factory=EvaluationParams)

    def fingerprint(self) -> Dict[str, Any]:
        """Settings that shape reported metrics."""
        return {
            "beta_ladder": list(self.fusion.beta_ladder),
            "gamma": list(self.fusion.gamma),
            "smoothing_lambda": self.homography.smoothing_lambda,
            "patch_count": self.rolling_shutter.patch_count,
            "readout_fraction": self.rolling_shutter.readout_fraction,
            "pyramid_levels": self.fusion.pyramid_levels,
            "mode": self.fusion.mode,
        }


def validation_to_config_error(exc: ValidationError, source: Optional[str] = None) -> ConfigError:
    first = exc.errors()[0]
    path = ".".join(str(part) for part in first.get("loc", ())) or "<root>"
    message = first.get("msg", "invalid value")
    return ConfigError(
        f"invalid config at {path}: {message}",
        file=source,
        field=path,
        constraint=message,
        error_count=exc.error_count(),
    )


def validate_model(model: Type[ModelT], raw: Any, source: Optional[str] = None) -> ModelT:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", file=source, found=type(raw).__name__)
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise validation_to_config_error(exc, source) from exc


def load_yaml_mapping(text: Union[str, bytes], source: Optional[str] = None) -> Dict[str, Any]:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(
            f"config is not valid YAML: {getattr(exc, 'problem', None) or exc}",
            file=source,
            line=mark.line + 1 if mark is not None else None,
        ) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping", file=source, found=type(raw).__name__)
    return raw


def read_yaml_file(path: Union[str, Path]) -> Dict[str, Any]:
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}", file=str(target)) from exc
    return load_yaml_mapping(text, str(target))


def plain(value: Any) -> Any:
    """Tuples to lists, recursively, so the YAML safe dumper accepts the tree."""
    if isinstance(value, dict):
        return {key: plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(item) for item in value]
    return value


def dump_yaml(data: Dict[str, Any]) -> str:
    return yaml.safe_dump(plain(data), sort_keys=False, default_flow_style=None)


def parse_config(text: Union[str, bytes], source: Optional[str] = None) -> ProjectConfig:
    return validate_model(ProjectConfig, load_yaml_mapping(text, source), source)


def read_config(path: Union[str, Path], overrides: Iterable[str] = ()) -> ProjectConfig:
    raw = read_yaml_file(path)
    return validate_model(ProjectConfig, apply_overrides(raw, overrides), str(path))


def write_config(config: ProjectConfig) -> str:
    return dump_yaml(config.model_dump())


def save_config(path: Union[str, Path], config: ProjectConfig) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(write_config(config), encoding="utf-8")
    return target


def parse_override(item: str) -> Tuple[Tuple[str, ...], Any]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ArgumentError("override must look like dotted.key=value", override=item)
    path = tuple(part.strip() for part in key.split("."))
    if any(not part for part in path):
        raise ArgumentError("override key has an empty component", override=item)
    try:
        parsed = yaml.safe_load(value) if value.strip() else None
    except yaml.YAMLError as exc:
        raise ArgumentError(f"override value is not valid YAML: {exc}", override=item) from exc
    return path, parsed


def apply_overrides(raw: Dict[str, Any], overrides: Iterable[str]) -> Dict[str, Any]:
    """Set ``dotted.key=value`` items (values parsed as YAML scalars/lists) on a copy of ``raw``."""
    result = plain(raw)
    for item in overrides:
        path, value = parse_override(item)
        node = result
        for part in path[:-1]:
            child = node.get(part)
            if not isinstance(child, dict):
                child = {}
                node[part] = child
            node = child
        node[path[-1]] = value
        logger.debug("config override %s", item)
    return result


__all__ = [
    "HomographyParams",
    "EvaluationParams",
    "ProjectConfig",
    "validation_to_config_error",
    "validate_model",
    "load_yaml_mapping",
    "read_yaml_file",
    "plain",
    "dump_yaml",
    "parse_config",
    "read_config",
    "write_config",
    "save_config",
    "parse_override",
    "apply_overrides",
]
