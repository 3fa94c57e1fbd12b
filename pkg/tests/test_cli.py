from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from gyroflow_services.cli import main, recorded_argv
from gyroflow_services.config import dump_yaml
from gyroflow_services.formats.flo import load_flo
from gyroflow_services.formats.homography import read_homography_array

MINIMAL = "intrinsics: {fx: 150.0, fy: 150.0, cx: 63.5, cy: 47.5, width: 128, height: 96}\n"


def error_of(capsys) -> dict:
    err = capsys.readouterr().err
    return json.loads(err[err.index("{"):])


@pytest.fixture
def project(tmp_path: Path, small_spec) -> Path:
    spec_path = tmp_path / "scene.yaml"
    spec_path.write_text(dump_yaml(small_spec.model_dump()), encoding="utf-8")
    root = tmp_path / "project"
    assert main(["synth", str(spec_path), "--out", str(root)]) == 0
    return root


def project_args(root: Path) -> list:
    return [
        "--config",
        str(root / "project_config.yaml"),
        "--gyro",
        str(root / "gyro.txt"),
        "--frames",
        str(root / "frames.txt"),
    ]


def manifest_without_output_dir(directory: Path) -> dict:
    payload = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    payload.pop("output_dir")
    return payload


def test_synth_writes_a_complete_project(project):
    for name in ("frames.txt", "gyro.txt", "project_config.yaml", "synth_spec.yaml", "manifest.json"):
        assert (project / name).is_file()
    for key in ("0000_0001", "0001_0002"):
        assert (project / "gt" / f"flow_{key}.flo").is_file()
        assert (project / "gt" / f"pts_{key}.txt").is_file()
        assert (project / "gt" / f"homography_{key}.txt").is_file()
    manifest = json.loads((project / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["subcommand"] == "synth"
    assert "frames.txt" in manifest["outputs"]


def test_full_pipeline(project, tmp_path):
    args = project_args(project)
    gyro_out, fuse_out, fit_out = tmp_path / "gyro", tmp_path / "fuse", tmp_path / "fit"

    assert main(["gyro2field", *args, "--out", str(gyro_out)]) == 0
    gyro = load_flo(gyro_out / "gyro_0000_0001.flo")
    gt = load_flo(project / "gt" / "flow_0000_0001.flo")
    assert float(np.mean(np.hypot(gyro.u - gt.u, gyro.v - gt.v))) < 1.0
    assert read_homography_array(gyro_out / "gyro_homography_0001_0002.txt").patch_count == 14

    assert main(["fuse", *args, "--out", str(fuse_out)]) == 0
    assert (fuse_out / "fused_0000_0001.flo").is_file()
    assert (fuse_out / "maps" / "map_0000_0001_L1.npy").is_file()

    fit_args = ["--flow-dir", str(fuse_out), "--second-pass", "--set", "homography.stride=2"]
    assert main(["fit-homo", *args, *fit_args, "--out", str(fit_out)]) == 0
    fitted = read_homography_array(fit_out / "homography_0000_0001.txt")
    assert (fitted.width, fitted.height, fitted.patch_count) == (128, 96, 14)
    assert (fit_out / "fused2_0001_0002.flo").is_file()
    assert json.loads((fit_out / "manifest.json").read_text(encoding="utf-8"))["overrides"] == ["homography.stride=2"]

    eval_out = tmp_path / "eval"
    config = str(project / "project_config.yaml")
    gt_dir = str(project / "gt")
    assert main(["eval", "--config", config, "--est", str(fit_out), "--gt", gt_dir, "--flow-prefix", "fused2", "--out", str(eval_out)]) == 0
    records = (eval_out / "records.txt").read_text(encoding="utf-8").splitlines()
    assert [line.split()[0] for line in records] == ["pair=0000_0001", "pair=0001_0002", "pair=mean"]
    assert all(" pme=" in line and " pck_points@1=" in line for line in records)
    report = json.loads((eval_out / "report_0000_0001.json").read_text(encoding="utf-8"))
    assert report["fingerprint"]["patch_count"] == 14
    summary = json.loads((eval_out / "summary.json").read_text(encoding="utf-8"))
    assert summary["pair"] == "mean"
    assert summary["count"] > 0

    viz_out = tmp_path / "viz"
    frames = project / "frames"
    assert main([
        "viz",
        str(fuse_out / "fused_0000_0001.flo"),
        "--gt",
        str(project / "gt" / "flow_0000_0001.flo"),
        "--image-a",
        str(frames / "frame_0000.png"),
        "--image-b",
        str(frames / "frame_0001.png"),
        "--out",
        str(viz_out),
    ]) == 0
    for suffix in ("color", "error", "overlay"):
        assert (viz_out / f"fused_0000_0001_{suffix}.png").is_file()


def test_manifest_replay_is_byte_identical(project, tmp_path):
    out = tmp_path / "fuse"
    assert main(["fuse", *project_args(project), "--pairs", "0:1", "--out", str(out)]) == 0
    manifest = (out / "manifest.json").read_bytes()
    flow = (out / "fused_0000_0001.flo").read_bytes()

    assert main(["--from-manifest", str(out / "manifest.json")]) == 0
    assert (out / "manifest.json").read_bytes() == manifest
    assert (out / "fused_0000_0001.flo").read_bytes() == flow

    elsewhere = tmp_path / "replayed"
    assert main(["--from-manifest", str(out), "--out", str(elsewhere)]) == 0
    assert (elsewhere / "fused_0000_0001.flo").read_bytes() == flow
    assert manifest_without_output_dir(elsewhere) == manifest_without_output_dir(out)


SUBCOMMANDS = ("synth", "gyro2field", "fuse", "fit-homo", "eval", "viz")


def subcommand_argv(name: str, project: Path, work: Path) -> list:
    """Arguments for one subcommand, without --out; earlier stages it reads from are run into ``work``."""
    args = project_args(project)
    if name == "synth":
        return ["synth", str(project.parent / "scene.yaml")]
    if name in ("gyro2field", "fuse"):
        return [name, *args]
    fuse_out = work / "fuse"
    assert main(["fuse", *args, "--out", str(fuse_out)]) == 0
    if name == "viz":
        frames = project / "frames"
        return [
            "viz",
            str(fuse_out / "fused_0000_0001.flo"),
            "--gt",
            str(project / "gt" / "flow_0000_0001.flo"),
            "--image-a",
            str(frames / "frame_0000.png"),
            "--image-b",
            str(frames / "frame_0001.png"),
        ]
    fit = ["fit-homo", *args, "--flow-dir", str(fuse_out), "--second-pass", "--set", "homography.stride=2"]
    if name == "fit-homo":
        return fit
    fit_out = work / "fit"
    assert main([*fit, "--out", str(fit_out)]) == 0
    config = str(project / "project_config.yaml")
    return ["eval", "--config", config, "--est", str(fit_out), "--gt", str(project / "gt"), "--flow-prefix", "fused2"]


def output_bytes(directory: Path) -> dict:
    return {
        str(path.relative_to(directory)): path.read_bytes()
        for path in sorted(directory.rglob("*"))
        if path.is_file() and path.name != "manifest.json"
    }


@pytest.mark.slow
@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_manifest_replay_reproduces_every_subcommand(project, tmp_path, name):
    argv = subcommand_argv(name, project, tmp_path / "inputs")
    first, replayed = tmp_path / "first", tmp_path / "replayed"
    assert main([*argv, "--out", str(first)]) == 0
    assert main(["--from-manifest", str(first / "manifest.json"), "--out", str(replayed)]) == 0
    produced = output_bytes(first)
    assert produced
    assert output_bytes(replayed) == produced
    assert manifest_without_output_dir(replayed) == manifest_without_output_dir(first)


@pytest.mark.slow
@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_job_count_does_not_change_any_subcommand(project, tmp_path, name):
    argv = subcommand_argv(name, project, tmp_path / "inputs")
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main([*argv, "--jobs", "1", "--out", str(serial)]) == 0
    assert main([*argv, "--jobs", "4", "--out", str(parallel)]) == 0
    assert output_bytes(serial) == output_bytes(parallel)
    assert manifest_without_output_dir(serial) == manifest_without_output_dir(parallel)


def test_recorded_argv_drops_scheduling_options():
    argv = ["fuse", "--jobs", "4", "--config", "c.yaml", "--out=somewhere", "--log-level", "DEBUG"]
    assert recorded_argv(argv) == ["fuse", "--config", "c.yaml"]


def test_missing_intrinsics_exits_with_one(project, tmp_path, capsys):
    config = tmp_path / "broken.yaml"
    config.write_text("fusion:\n  mode: sgf\n", encoding="utf-8")
    args = project_args(project)
    args[1] = str(config)
    assert main(["--log-level", "CRITICAL", "gyro2field", *args, "--out", str(tmp_path / "out")]) == 1
    payload = error_of(capsys)
    assert payload["kind"] == "ConfigError"
    assert payload["context"]["field"] == "intrinsics"


def test_usage_and_input_errors_exit_with_one(tmp_path, capsys):
    assert main(["--log-level", "CRITICAL"]) == 1
    assert error_of(capsys)["kind"] == "ArgumentError"
    assert main(["--log-level", "CRITICAL", "fuse"]) == 1
    capsys.readouterr()
    config = tmp_path / "project.yaml"
    config.write_text(MINIMAL, encoding="utf-8")
    missing = [
        "--log-level",
        "CRITICAL",
        "gyro2field",
        "--config",
        str(config),
        "--gyro",
        str(tmp_path / "absent.txt"),
        "--frames",
        str(tmp_path / "frames.txt"),
        "--out",
        str(tmp_path / "out"),
    ]
    assert main(missing) == 1
    assert error_of(capsys)["kind"] == "FormatError"


def test_degenerate_projection_exits_with_two(tmp_path, capsys):
    config = tmp_path / "project.yaml"
    config.write_text(MINIMAL, encoding="utf-8")
    est, gt = tmp_path / "est", tmp_path / "gt"
    est.mkdir()
    gt.mkdir()
    (est / "homography_0000_0001.txt").write_text("homography_v1\n128,96,1\n1,0,0,0,1,0,-0.1,0,1\n", encoding="utf-8")
    (gt / "pts_0000_0001.txt").write_text("pts_v1\n10,0,0,0\n", encoding="utf-8")
    argv = ["--log-level", "CRITICAL", "eval", "--config", str(config), "--est", str(est), "--gt", str(gt), "--out", str(tmp_path / "out")]
    assert main(argv) == 2
    payload = error_of(capsys)
    assert payload["kind"] == "DegenerateProjectionError"
    assert payload["context"]["est_file"].endswith("homography_0000_0001.txt")
