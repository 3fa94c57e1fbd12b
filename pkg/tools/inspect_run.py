#!/usr/bin/env python3
"""Print a run directory's manifest and, when present, its evaluation records."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from gyroflow_services.errors import GyroflowError  # noqa: E402
from gyroflow_services.manifest import MANIFEST_NAME, read_manifest  # noqa: E402


def main() -> None:
    parser = argparse.ArgumentParser(description="Inspect a gyroflow run directory.")
    parser.add_argument(
        "run_dir",
        nargs="?",
        default=os.environ.get("GYROFLOW_OUT_DIR", "runs"),
        help="Directory holding manifest.json (default: $GYROFLOW_OUT_DIR or runs).",
    )
    parser.add_argument(
        "--config",
        action="store_true",
        help="Also print the resolved project config recorded in the manifest.",
    )
    args = parser.parse_args()

    run_dir = Path(args.run_dir)
    if not (run_dir / MANIFEST_NAME).exists():
        raise SystemExit(f"No {MANIFEST_NAME} in {run_dir}")
    try:
        manifest = read_manifest(run_dir)
    except GyroflowError as exc:
        raise SystemExit(json.dumps(exc.to_payload(), indent=2, default=str))

    print(f"Run: {run_dir.resolve()}")
    print(f"Subcommand: {manifest.subcommand} (version {manifest.version})")
    print(f"Command line: {' '.join(manifest.argv)}")
    if manifest.overrides:
        print(f"Overrides: {', '.join(manifest.overrides)}")
    print("Inputs:")
    for name, path in sorted(manifest.inputs.items()):
        print(f"  {name}: {path}")
    print(f"Outputs ({len(manifest.outputs)}):")
    for path in manifest.outputs:
        marker = "" if (run_dir / path).exists() else "  (missing)"
        print(f"  {path}{marker}")
    if manifest.warnings:
        print(f"Warnings ({len(manifest.warnings)}):")
        for warning in manifest.warnings:
            print(f"  {warning}")
    if args.config and manifest.config is not None:
        print("Config:")
        print(json.dumps(manifest.config, indent=2))

    records = run_dir / "records.txt"
    if records.exists():
        print("\n== records ==")
        print(records.read_text(encoding="utf-8").rstrip())


if __name__ == "__main__":
    main()
