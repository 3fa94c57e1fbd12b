"""Command-line surface: ``gyroflow <subcommand> [options]``.

Subcommands: gyro2field, fuse, fit-homo, eval, viz, synth. Every run writes
a ``manifest.json`` next to its outputs; ``gyroflow --from-manifest PATH``
replays it with the recorded configuration.

Errors are printed to stderr as a JSON payload; the exit code is 1 for
validation and format problems and 2 for numerical or degenerate ones.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv
from rich.console import Console
from rich.logging import RichHandler

from . import __version__, settings
from .config import ProjectConfig, plain, read_config, validate_model
from .errors import ArgumentError, GyroflowError
from .manifest import RunManifest, read_manifest, relative_outputs, write_manifest
from .pipeline import (
    PairOutcome,
    ProjectInputs,
    evaluate_pair_files,
    evaluation_jobs,
    fit_homo_pair,
    fuse_pair,
    gyro2field_pair,
    render_flow,
    run_concurrently,
    select_pairs,
    write_reports,
)
from .synth import read_synth_spec, synth_sequence, write_synth_project

# Load variables from a local .env file if present
load_dotenv()

console = Console()
logger = logging.getLogger(__name__)

# Options that only steer scheduling or placement; left out of the recorded argv.
UNRECORDED = ("--jobs", "--out", "--log-level")


@dataclass
class CommandResult:
    written: List[Path] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    inputs: Dict[str, str] = field(default_factory=dict)
    parameters: Dict[str, Any] = field(default_factory=dict)

    def absorb(self, outcomes: Sequence[PairOutcome]) -> None:
        for outcome in outcomes:
            self.written.extend(outcome.written)
            self.warnings.extend(outcome.warnings)


class CliParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise ArgumentError(message, usage=self.format_usage().strip())


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=level.upper(),
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def build_parser() -> CliParser:
    parser = CliParser(prog="gyroflow", description="Gyro motion fields, flow fusion and homography fitting")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    parser.add_argument("--from-manifest", metavar="PATH", help="Replay a recorded run")
    parser.add_argument("--out", dest="replay_out", metavar="DIR", help="Output directory for a replay")
    parser.add_argument("--jobs", dest="replay_jobs", type=int, default=1, metavar="N")

    common = CliParser(add_help=False)
    common.add_argument("--config", default=str(settings.CONFIG_PATH), help="Project config (env GYROFLOW_CONFIG)")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="Frame pairs processed concurrently")
    common.add_argument("--out", metavar="DIR", help="Output directory (default under GYROFLOW_OUT_DIR)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override a config key")

    subparsers = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    project = CliParser(add_help=False)
    project.add_argument("--gyro", required=True, help="gyro_v1 log")
    project.add_argument("--frames", required=True, help="frames_v1 index")
    project.add_argument("--pairs", help="Frame pairs as a:b[,c:d...]; consecutive pairs by default")

    subparsers.add_parser("gyro2field", parents=[common, project], help="Rasterise gyro fields per frame pair")
    subparsers.add_parser("fuse", parents=[common, project], help="Fuse gyro fields with residual flow")

    fit = subparsers.add_parser("fit-homo", parents=[common, project], help="Fit row-patch homography arrays")
    fit.add_argument("--flow-dir", required=True, help="Directory written by the fuse subcommand")
    fit.add_argument("--second-pass", action="store_true", help="Re-fuse with the fitted array as the motion prior")

    evaluate = subparsers.add_parser(
        "eval",
        parents=[common],
        help="Score estimates against ground truth",
        description=(
            "Writes report_<pair>.json, records.txt (one key=value line per pair: pair, aepe, "
            "pck@<tau>, pme, pck_points@<tau>, count, excluded; last line pair=mean) and summary.json."
        ),
    )
    evaluate.add_argument("--est", required=True, help="Directory with <prefix>_<a>_<b>.flo / homography_<a>_<b>.txt")
    evaluate.add_argument("--gt", required=True, help="Directory with flow_<a>_<b>.flo / pts_<a>_<b>.txt")
    evaluate.add_argument("--flow-prefix", default="fused", help="Estimated flow family to score")

    viz = subparsers.add_parser("viz", parents=[common], help="Render flow as images")
    viz.add_argument("flow", help=".flo file")
    viz.add_argument("--gt", help="Ground-truth .flo for the error heat map")
    viz.add_argument("--image-a")
    viz.add_argument("--image-b")
    viz.add_argument("--max-mag", type=float)

    synth = subparsers.add_parser("synth", parents=[common], help="Generate a synthetic project")
    synth.add_argument("spec", help="Synthetic scene spec (YAML)")
    return parser


def recorded_argv(argv: Sequence[str]) -> List[str]:
    kept: List[str] = []
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        name = token.split("=", 1)[0]
        if name in UNRECORDED:
            skip = "=" not in token
            continue
        kept.append(token)
    return kept


def load_project_config(args: argparse.Namespace, recorded: Optional[Dict[str, Any]] = None) -> ProjectConfig:
    if recorded is not None:
        return validate_model(ProjectConfig, recorded, args.config)
    return read_config(args.config, args.set)


async def cmd_gyro2field(args: argparse.Namespace, config: ProjectConfig, out: Path) -> CommandResult:
    inputs = ProjectInputs.load(args.gyro, args.frames)
    pairs = select_pairs(inputs.frames, args.pairs)
    result = CommandResult(inputs={"gyro": args.gyro, "frames": args.frames}, parameters={"pairs": args.pairs})
    result.absorb(await run_concurrently(lambda pair: gyro2field_pair(config, inputs, pair, out), pairs, args.jobs))
    return result


async def cmd_fuse(args: argparse.Namespace, config: ProjectConfig, out: Path) -> CommandResult:
    inputs = ProjectInputs.load(args.gyro, args.frames)
    pairs = select_pairs(inputs.frames, args.pairs)
    result = CommandResult(
        inputs={"gyro": args.gyro, "frames": args.frames},
        parameters={"pairs": args.pairs, "mode": config.fusion.mode},
    )
    result.absorb(await run_concurrently(lambda pair: fuse_pair(config, inputs, pair, out), pairs, args.jobs))
    return result


async def cmd_fit_homo(args: argparse.Namespace, config: ProjectConfig, out: Path) -> CommandResult:
    inputs = ProjectInputs.load(args.gyro, args.frames)
    pairs = select_pairs(inputs.frames, args.pairs)
    flow_dir = Path(args.flow_dir)
    result = CommandResult(
        inputs={"gyro": args.gyro, "frames": args.frames, "flow_dir": args.flow_dir},
        parameters={"pairs": args.pairs, "second_pass": args.second_pass},
    )
    result.absorb(
        await run_concurrently(
            lambda pair: fit_homo_pair(config, inputs, pair, flow_dir, out, args.second_pass), pairs, args.jobs
        )
    )
    return result


async def cmd_eval(args: argparse.Namespace, config: ProjectConfig, out: Path) -> CommandResult:
    jobs = evaluation_jobs(Path(args.est), Path(args.gt), args.flow_prefix)

    def score(job: Tuple[str, Dict[str, Optional[Path]]]) -> Any:
        key, files = job
        return evaluate_pair_files(config, key, **files)

    reports = await run_concurrently(score, jobs, args.jobs)
    for report in reports:
        console.print(report.record_line())
    return CommandResult(
        written=write_reports(reports, config, out),
        inputs={"est": args.est, "gt": args.gt},
        parameters={"flow_prefix": args.flow_prefix},
    )


async def cmd_viz(args: argparse.Namespace, config: Optional[ProjectConfig], out: Path) -> CommandResult:
    written = render_flow(
        args.flow, out, gt_path=args.gt, image_a=args.image_a, image_b=args.image_b, max_mag=args.max_mag
    )
    inputs = {key: value for key, value in {"flow": args.flow, "gt": args.gt, "image_a": args.image_a, "image_b": args.image_b}.items() if value}
    return CommandResult(written=written, inputs=inputs, parameters={"max_mag": args.max_mag})


async def cmd_synth(args: argparse.Namespace, config: Optional[ProjectConfig], out: Path) -> CommandResult:
    spec = read_synth_spec(args.spec)
    sequence = await asyncio.to_thread(synth_sequence, spec)
    written = write_synth_project(sequence, out)
    return CommandResult(written=written, warnings=list(sequence.warnings), inputs={"spec": args.spec})


Command = Callable[[argparse.Namespace, Any, Path], Awaitable[CommandResult]]

COMMANDS: Dict[str, Tuple[Command, bool]] = {
    "gyro2field": (cmd_gyro2field, True),
    "fuse": (cmd_fuse, True),
    "fit-homo": (cmd_fit_homo, True),
    "eval": (cmd_eval, True),
    "viz": (cmd_viz, False),
    "synth": (cmd_synth, False),
}


async def run_command(argv: Sequence[str], parser: CliParser, top: argparse.Namespace) -> int:
    recorded: Optional[Dict[str, Any]] = None
    if top.from_manifest:
        manifest = read_manifest(top.from_manifest)
        logger.info("replaying %s run recorded by version %s", manifest.subcommand, manifest.version)
        command_argv = list(manifest.argv)
        args = parser.parse_args(command_argv)
        args.out = top.replay_out or manifest.output_dir
        args.jobs = top.replay_jobs
        recorded = manifest.config
    else:
        command_argv = recorded_argv(argv)
        args = top
    if not args.command:
        parser.error("a subcommand or --from-manifest is required")

    command, needs_config = COMMANDS[args.command]
    out = Path(args.out) if args.out else settings.OUTPUT_ROOT / args.command
    config = load_project_config(args, recorded) if needs_config else None
    out.mkdir(parents=True, exist_ok=True)

    result = await command(args, config, out)
    manifest = RunManifest(
        subcommand=args.command,
        argv=command_argv,
        inputs=result.inputs,
        config_path=args.config if config is not None else None,
        config=plain(config.model_dump()) if config is not None else None,
        overrides=list(args.set),
        output_dir=out.as_posix(),
        parameters=result.parameters,
        outputs=relative_outputs(result.written, out),
        warnings=result.warnings,
    )
    manifest_path = write_manifest(manifest, out)
    console.print(f"Wrote {len(manifest.outputs)} file(s) under {out}")
    console.print(f"Wrote {manifest_path}")
    return 0


def error_payload(exc: BaseException) -> Dict[str, Any]:
    if isinstance(exc, GyroflowError):
        return exc.to_payload()
    context = {"file": getattr(exc, "filename", None)}
    return {"status": "error", "kind": type(exc).__name__, "error": str(exc), "context": context}


async def amain(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        top = parser.parse_args(argv)
        configure_logging(top.log_level)
        return await run_command(argv, parser, top)
    except (GyroflowError, OSError) as exc:
        sys.stderr.write(json.dumps(error_payload(exc), indent=2, default=str) + "\n")
        return exc.exit_code if isinstance(exc, GyroflowError) else 1


def main(argv: Optional[Sequence[str]] = None) -> int:
    return asyncio.run(amain(argv))


if __name__ == "__main__":
    sys.exit(main())
