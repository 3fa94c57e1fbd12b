"""Per-pair jobs behind the CLI subcommands.

Each job reads its inputs, runs one frame pair through the library and
writes its own files; jobs share nothing, so they can run in any order or
concurrently. File names carry the pair key ``<a>_<b>`` (zero-padded ids).
"""

from __future__ import annotations

import asyncio
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from .config import ProjectConfig
from .errors import ArgumentError, FormatError, GyroflowError
from .formats.correspondences import read_correspondences
from .formats.colorize import flow_to_color, heatmap_to_image, overlay
from .formats.flo import load_flo, save_flo
from .formats.frames import FrameIndex, FrameRecord, read_frame_index
from .formats.gyro_log import GyroLog, read_gyro_log
from .formats.homography import read_homography_array, write_homography_array
from .formats.images import crop_to, load_image, pad_to_multiple, save_image, to_luma
from .fusion import FusionResult, align_to_frame_a, refine_fusion_map, run_fusion
from .gyro_field import homography_array_to_field, row_patch_homographies, warp_image
from .homography_fit import FusionInputs, fit_rs_homography_details, replace_gyro_with_homography
from .metrics import EvalReport, error_heatmap, evaluate_flow, evaluate_homography, merge_reports, summarize_reports
from .types import FlowField, FusionMap, HomographyArray

logger = logging.getLogger(__name__)

PAIR_FILE = re.compile(r"^(?P<stem>[A-Za-z0-9]+)_(?P<a>\d+)_(?P<b>\d+)\.(?P<ext>flo|txt)$")

T = TypeVar("T")
PathLike = Union[str, Path]
FramePair = Tuple[FrameRecord, FrameRecord]


def pair_key(a: int, b: int) -> str:
    return f"{a:04d}_{b:04d}"


@dataclass
class PairOutcome:
    key: str
    written: List[Path] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def warn(self, message: str) -> None:
        logger.warning("%s: %s", self.key, message)
        self.warnings.append(f"{self.key}: {message}")


@dataclass(frozen=True)
class ProjectInputs:
    """Gyro log and frame index, with the directory frame paths are relative to."""

    gyro: GyroLog
    frames: FrameIndex
    frames_root: Path

    @classmethod
    def load(cls, gyro_path: PathLike, frames_path: PathLike) -> "ProjectInputs":
        return cls(read_gyro_log(gyro_path), read_frame_index(frames_path), Path(frames_path).parent)

    def image(self, record: FrameRecord) -> np.ndarray:
        path = Path(record.path)
        return load_image(path if path.is_absolute() else self.frames_root / path)


def select_pairs(index: FrameIndex, selection: Optional[str] = None) -> List[FramePair]:
    """Consecutive pairs by default, or an explicit ``a:b,c:d`` list of frame ids."""
    if not selection:
        return index.consecutive_pairs()
    pairs: List[FramePair] = []
    for item in selection.split(","):
        first, sep, second = item.strip().partition(":")
        if not sep or not first.strip().isdigit() or not second.strip().isdigit():
            raise ArgumentError("pair selection must look like a:b[,c:d...]", item=item)
        rec_a, rec_b = index.by_id(int(first)), index.by_id(int(second))
        if rec_b.timestamp_ns <= rec_a.timestamp_ns:
            raise ArgumentError("frame b must follow frame a", pair=item)
        pairs.append((rec_a, rec_b))
    return pairs


async def run_concurrently(
    func: Callable[..., T], items: Sequence[Any], jobs: int = 1
) -> List[T]:
    """Run ``func(item)`` in worker threads, at most ``jobs`` at a time; results keep item order."""
    if jobs < 1:
        raise ArgumentError("--jobs must be at least 1", jobs=jobs)
    gate = asyncio.Semaphore(jobs)

    async def one(item: Any) -> T:
        async with gate:
            return await asyncio.to_thread(func, item)

    tasks: List[Awaitable[T]] = [one(item) for item in items]
    return list(await asyncio.gather(*tasks))


def gyro_array_for_pair(config: ProjectConfig, gyro: GyroLog, rec_a: FrameRecord, rec_b: FrameRecord) -> HomographyArray:
    return row_patch_homographies(
        config.intrinsics,
        gyro,
        rec_a.timestamp_ns,
        rec_b.timestamp_ns,
        config.rolling_shutter,
        config.axis_remap,
        frame_period_ns=config.frame_period_ns,
        time_offset_ns=config.time_offset_ns,
    )


def gyro2field_pair(config: ProjectConfig, inputs: ProjectInputs, pair: FramePair, out_dir: Path) -> PairOutcome:
    rec_a, rec_b = pair
    outcome = PairOutcome(pair_key(rec_a.frame_id, rec_b.frame_id))
    array = gyro_array_for_pair(config, inputs.gyro, rec_a, rec_b)
    K = config.intrinsics
    flow = homography_array_to_field(array, K, K.width, K.height)
    outcome.written.append(save_flo(out_dir / f"gyro_{outcome.key}.flo", flow))
    outcome.written.append(_write_text(out_dir / f"gyro_homography_{outcome.key}.txt", write_homography_array(array)))
    return outcome


def _write_text(path: Path, content: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")
    return path


def _save_map(path: Path, values: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        np.save(handle, np.ascontiguousarray(values, dtype=np.float64), allow_pickle=False)
    return path


def load_map(path: PathLike, level: int, bounds: Tuple[float, float]) -> FusionMap:
    try:
        values = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read fusion map: {exc}", file=str(path)) from exc
    if values.ndim != 2:
        raise FormatError("fusion map must be a 2-D grid", file=str(path), shape=values.shape)
    lower, upper = bounds
    return FusionMap(values, level, lower, upper)


def map_bounds(config: ProjectConfig, level: int) -> Tuple[float, float]:
    if config.fusion.mode == "no_map":
        return (1.0, 1.0)
    return config.fusion.ladder().bounds(level)


def _pad_field(f: FlowField, rows: int, cols: int) -> FlowField:
    widths = ((0, rows), (0, cols))
    return FlowField(np.pad(f.u, widths, mode="edge"), np.pad(f.v, widths, mode="edge"))


def fuse_images(config: ProjectConfig, img_a: np.ndarray, img_b: np.ndarray, array: HomographyArray) -> Tuple[FusionResult, Tuple[int, int]]:
    """Fuse one pair, padding images whose size the pyramid cannot halve evenly.

    Returns the result cropped back to the input size and the (rows, cols) of padding used.
    """
    a, b = to_luma(img_a), to_luma(img_b)
    if a.shape != b.shape:
        raise ArgumentError("frames differ in size", img_a=a.shape, img_b=b.shape)
    height, width = a.shape
    K = config.intrinsics
    gyro = homography_array_to_field(array, K, width, height)
    multiple = config.fusion.levels().factor(config.fusion.pyramid_levels)
    a_pad, padding = pad_to_multiple(a, multiple)
    if padding == (0, 0):
        return run_fusion(a, b, array, K, config.fusion, config.local_flow, gyro_field=gyro), padding

    b_pad, _ = pad_to_multiple(b, multiple)
    result = run_fusion(a_pad, b_pad, array, K, config.fusion, config.local_flow, gyro_field=_pad_field(gyro, *padding))
    flow = FlowField(crop_to(result.flow.u, height, width), crop_to(result.flow.v, height, width))
    maps: Dict[int, FusionMap] = {}
    for level, M in result.maps.items():
        factor = config.fusion.levels().factor(level)
        rows, cols = -(-height // factor), -(-width // factor)
        maps[level] = FusionMap(crop_to(M.values, rows, cols), level, M.lower, M.upper)
    return FusionResult(flow, maps, gyro), padding


def fuse_pair(config: ProjectConfig, inputs: ProjectInputs, pair: FramePair, out_dir: Path) -> PairOutcome:
    rec_a, rec_b = pair
    outcome = PairOutcome(pair_key(rec_a.frame_id, rec_b.frame_id))
    array = gyro_array_for_pair(config, inputs.gyro, rec_a, rec_b)
    result, padding = fuse_images(config, inputs.image(rec_a), inputs.image(rec_b), array)
    if padding != (0, 0):
        outcome.warn(f"padded by {padding[0]} row(s) and {padding[1]} column(s) for the pyramid")
    outcome.written.append(save_flo(out_dir / f"fused_{outcome.key}.flo", result.flow))
    outcome.written.append(_write_text(out_dir / f"gyro_homography_{outcome.key}.txt", write_homography_array(array)))
    for level in sorted(result.maps):
        outcome.written.append(_save_map(out_dir / "maps" / f"map_{outcome.key}_L{level}.npy", result.maps[level].values))
    return outcome


def refined_weights(
    config: ProjectConfig, M: FusionMap, img_a: np.ndarray, img_b: np.ndarray, gyro: FlowField
) -> FusionMap:
    """Refine the full-resolution map from map-masked frame a and gyro-aligned frame b."""
    a = to_luma(img_a)
    aligned = align_to_frame_a(a, img_b, gyro)
    return refine_fusion_map(
        M,
        M.values * a,
        M.values * aligned,
        config.fusion.gamma,
        sigma=config.fusion.residual_sigma,
        window=config.fusion.residual_window,
    )


def fit_homo_pair(
    config: ProjectConfig,
    inputs: ProjectInputs,
    pair: FramePair,
    flow_dir: Path,
    out_dir: Path,
    second_pass: bool = False,
) -> PairOutcome:
    rec_a, rec_b = pair
    outcome = PairOutcome(pair_key(rec_a.frame_id, rec_b.frame_id))
    flow = load_flo(flow_dir / f"fused_{outcome.key}.flo")
    array = gyro_array_for_pair(config, inputs.gyro, rec_a, rec_b)
    K = config.intrinsics
    if (flow.width, flow.height) != (array.width, array.height):
        raise ArgumentError(
            "fused flow and intrinsics differ in size",
            file=str(flow_dir / f"fused_{outcome.key}.flo"),
            flow_size=(flow.width, flow.height),
            intrinsics_size=(array.width, array.height),
        )

    map_path = flow_dir / "maps" / f"map_{outcome.key}_L1.npy"
    M: Optional[FusionMap] = None
    if map_path.exists():
        M = load_map(map_path, 1, map_bounds(config, 1))
        if config.homography.use_refined_map:
            gyro = homography_array_to_field(array, K, array.width, array.height)
            M = refined_weights(config, M, inputs.image(rec_a), inputs.image(rec_b), gyro)
    else:
        outcome.warn(f"no fusion map at {map_path}; fitting with uniform weights")

    params = config.homography
    fit = fit_rs_homography_details(
        flow,
        M,
        array,
        params.smoothing_lambda,
        K=K,
        stride=params.stride,
        refine_passes=params.refine_passes,
        min_weight=params.min_weight,
        min_gain=params.min_gain,
    )
    for index in fit.inherited:
        outcome.warn(f"patch {index} inherited its gyro homography")
    outcome.written.append(_write_text(out_dir / f"homography_{outcome.key}.txt", write_homography_array(fit.array)))

    if second_pass:
        fusion_inputs = FusionInputs(inputs.image(rec_a), inputs.image(rec_b), K, config.fusion, config.local_flow)
        refused = replace_gyro_with_homography(fusion_inputs, fit.array)
        outcome.written.append(save_flo(out_dir / f"fused2_{outcome.key}.flo", refused))
    return outcome


def _pair_files(directory: Path, stem: str, ext: str) -> Dict[str, Path]:
    found: Dict[str, Path] = {}
    if not directory.is_dir():
        raise ArgumentError("not a directory", path=str(directory))
    for path in sorted(directory.iterdir()):
        match = PAIR_FILE.match(path.name)
        if match and match["stem"] == stem and match["ext"] == ext:
            found[pair_key(int(match["a"]), int(match["b"]))] = path
    return found


def evaluate_pair_files(
    config: ProjectConfig,
    key: str,
    est_flow: Optional[Path],
    gt_flow: Optional[Path],
    est_homography: Optional[Path],
    gt_points: Optional[Path],
) -> EvalReport:
    thresholds = config.evaluation.pck_thresholds
    fingerprint = config.fingerprint()
    flow_report = homography_report = None
    if est_flow is not None and gt_flow is not None:
        est, gt = load_flo(est_flow), load_flo(gt_flow)
        if est.shape != gt.shape:
            raise ArgumentError(
                "estimated and ground-truth flows differ in size",
                est_file=str(est_flow),
                gt_file=str(gt_flow),
                est_shape=est.shape,
                gt_shape=gt.shape,
            )
        flow_report = evaluate_flow(est, gt, thresholds, pair=key, fingerprint=fingerprint)
    if est_homography is not None and gt_points is not None:
        try:
            homography_report = evaluate_homography(
                read_homography_array(est_homography),
                read_correspondences(gt_points),
                thresholds,
                pair=key,
                fingerprint=fingerprint,
            )
        except GyroflowError as exc:
            exc.context.setdefault("est_file", str(est_homography))
            exc.context.setdefault("gt_file", str(gt_points))
            raise
    return merge_reports(flow_report, homography_report)


def evaluation_jobs(est_dir: Path, gt_dir: Path, flow_prefix: str = "fused") -> List[Tuple[str, Dict[str, Optional[Path]]]]:
    """Pair keys with something to evaluate, in key order."""
    est_flows = _pair_files(est_dir, flow_prefix, "flo")
    est_homographies = _pair_files(est_dir, "homography", "txt")
    gt_flows = _pair_files(gt_dir, "flow", "flo")
    gt_points = _pair_files(gt_dir, "pts", "txt")
    jobs = []
    for key in sorted(set(est_flows) | set(est_homographies)):
        files = {
            "est_flow": est_flows.get(key),
            "gt_flow": gt_flows.get(key),
            "est_homography": est_homographies.get(key),
            "gt_points": gt_points.get(key),
        }
        flow_ready = files["est_flow"] is not None and files["gt_flow"] is not None
        points_ready = files["est_homography"] is not None and files["gt_points"] is not None
        if flow_ready or points_ready:
            jobs.append((key, files))
        else:
            logger.warning("%s: no ground truth for the estimates, skipped", key)
    if not jobs:
        raise ArgumentError("no estimate has matching ground truth", est_dir=str(est_dir), gt_dir=str(gt_dir))
    return jobs


def write_reports(reports: Iterable[EvalReport], config: ProjectConfig, out_dir: Path) -> List[Path]:
    items = list(reports)
    written = [_write_text(out_dir / f"report_{report.pair}.json", report.to_json()) for report in items]
    summary = summarize_reports(items, config.fingerprint())
    lines = "".join(report.record_line() + "\n" for report in [*items, summary])
    written.append(_write_text(out_dir / "records.txt", lines))
    written.append(_write_text(out_dir / "summary.json", summary.to_json()))
    return written


def render_flow(
    flow_path: PathLike,
    out_dir: Path,
    *,
    gt_path: Optional[PathLike] = None,
    image_a: Optional[PathLike] = None,
    image_b: Optional[PathLike] = None,
    max_mag: Optional[float] = None,
) -> List[Path]:
    """Colour wheel, error heat map against GT and a superimposed warp, as PNGs."""
    flow = load_flo(flow_path)
    stem = Path(flow_path).stem
    written = [save_image(out_dir / f"{stem}_color.png", flow_to_color(flow, max_mag))]
    if gt_path is not None:
        gt = load_flo(gt_path)
        if gt.shape != flow.shape:
            raise ArgumentError(
                "flow and ground truth differ in size", est_file=str(flow_path), gt_file=str(gt_path)
            )
        written.append(save_image(out_dir / f"{stem}_error.png", heatmap_to_image(error_heatmap(flow, gt))))
    if (image_a is None) != (image_b is None):
        raise ArgumentError("--image-a and --image-b go together")
    if image_a is not None and image_b is not None:
        a, b = to_luma(load_image(image_a)), to_luma(load_image(image_b))
        if a.shape != flow.shape or b.shape != flow.shape:
            raise ArgumentError(
                "images and flow differ in size", image_a=str(image_a), image_b=str(image_b), flow_file=str(flow_path)
            )
        aligned, _ = warp_image(b, flow)
        written.append(save_image(out_dir / f"{stem}_overlay.png", overlay(a, aligned)))
    return written


__all__ = [
    "PAIR_FILE",
    "PairOutcome",
    "ProjectInputs",
    "pair_key",
    "select_pairs",
    "run_concurrently",
    "gyro_array_for_pair",
    "gyro2field_pair",
    "load_map",
    "map_bounds",
    "fuse_images",
    "fuse_pair",
    "refined_weights",
    "fit_homo_pair",
    "evaluate_pair_files",
    "evaluation_jobs",
    "write_reports",
    "render_flow",
]
