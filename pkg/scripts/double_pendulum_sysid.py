#!/usr/bin/env python3
"""Double-pendulum identification from a 400 fps marker recording.

Imports the marker CSV into joint space, evaluates the hand-measured
nominal model, identifies masses, lengths and inertias, and writes
before/after per-step error curves. If no dataset directory is given, a
synthetic recording is generated first (see make_pendulum_dataset.py).

Usage: python scripts/double_pendulum_sysid.py --out runs/dpen [--data data/dpen]
"""

import argparse
import json
import sys
from pathlib import Path

from hybridsim.cli import main as cli
from hybridsim.trajectory import import_double_pendulum, read_marker_csv, write_trajectory

sys.path.insert(0, str(Path(__file__).resolve().parent))
from make_pendulum_dataset import generate  # noqa: E402


def run(cmd):
    print("+ hybridsim " + " ".join(cmd))
    code = cli(cmd)
    if code != 0:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--data", help="dataset directory with markers.csv + nominal_model.txt")
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--restarts", type=int, default=8)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data = Path(args.data) if args.data else None
    if data is None:
        data = out / "dataset"
        generate(data)

    frames = read_marker_csv(data / "markers.csv")
    traj = import_double_pendulum(frames, 1e-3, smooth=True)
    target_path = out / "target.csv"
    write_trajectory(traj, target_path)
    nominal_model = str(data / "nominal_model.txt")

    common = ["--target", str(target_path), "--window", "10", "--reg", "0"]
    run(["evaluate", "--model", nominal_model, *common,
         "--out", str(out / "errors_before.csv")])
    run(["identify", "--model", nominal_model, *common,
         "--pbh-workers", str(args.workers), "--restarts", str(args.restarts),
         "--seed", str(args.seed), "--max-iters", "40",
         "--out-report", str(out / "report.json"),
         "--out-model", str(out / "fitted_model.txt")])
    run(["evaluate", "--model", str(out / "fitted_model.txt"), *common,
         "--out", str(out / "errors_after.csv")])

    before = json.loads((out / "errors_before.csv.summary.json").read_text())
    after = json.loads((out / "errors_after.csv.summary.json").read_text())
    reduction = 1.0 - after["loss"] / before["loss"]
    print(f"windowed loss before: {before['loss']:.4f}")
    print(f"windowed loss after:  {after['loss']:.4f}  ({100 * reduction:.1f}% lower)")
    (out / "summary.json").write_text(json.dumps({
        "loss_before": before["loss"], "loss_after": after["loss"],
        "reduction": reduction,
    }, indent=2) + "\n")


if __name__ == "__main__":
    main()
