#!/usr/bin/env python3
"""Produce a double-pendulum marker recording plus a hand-measured model.

The "rig" simulated here is deliberately richer than the model later fitted
to it: link centers of mass sit inside the links, the links carry
distributed inertia, the joints are damped asymmetrically, and the tracker
adds pixel jitter at 400 fps. The companion nominal model file holds the
kind of numbers one would get from a ruler and a kitchen scale: marker-based
lengths, rounded masses, a crude inertia guess.

Usage: python scripts/make_pendulum_dataset.py --out data/dpen [--duration 2.5]
"""

import argparse
import math
from pathlib import Path

import numpy as np

from hybridsim.dynamics import rollout
from hybridsim.models import parse_model
from hybridsim.trajectory import import_double_pendulum

RIG_MODEL = """
chain {
  link { mass=0.28, length=0.30, com=0.21, inertia_zz=0.0021, damping=0.012 }
  link { mass=0.14, length=0.24, com=0.16, inertia_zz=0.00067, damping=0.006 }
  gravity=9.81
}
"""

PIVOT_PX = (320.0, 240.0)
PX_PER_M = 1000.0
FPS = 400.0
SIM_DT = 2.5e-4  # rig integrated finer than the camera clock

NOMINAL_TEMPLATE = """\
# Hand-measured starting point for the marker recording in this directory:
# lengths from the tracked markers, masses from a kitchen scale (rounded),
# inertia a ballpark guess, damping assumed equal in both joints.
chain {{
  link {{ mass=0.35 free(0.02, 2.0), length={l1:.6f} free(0.05, 1.0), inertia_zz=0.003 free(1e-6, 0.05), damping=0.01 }}
  link {{ mass=0.10 free(0.02, 2.0), length={l2:.6f} free(0.05, 1.0), inertia_zz=0.001 free(1e-6, 0.05), damping=0.01 }}
  gravity=9.81
}}
"""


def world_to_pixels(x, y):
    return PIVOT_PX[0] + x * PX_PER_M, PIVOT_PX[1] - y * PX_PER_M


def generate(out_dir, duration=2.5, seed=2024, jitter_px=0.3,
             q0=(1.9, -0.4), qd0=(0.0, 0.0)):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rig = parse_model(RIG_MODEL)

    substeps = int(round(1.0 / (FPS * SIM_DT)))
    steps = int(round(duration * FPS)) * substeps
    traj = rollout(rig, None, list(q0), list(qd0), steps, SIM_DT)
    q = traj.q[::substeps]
    t = np.arange(q.shape[0]) / FPS

    l1, l2 = rig.links[0].length, rig.links[1].length
    rng = np.random.default_rng(seed)
    rows = []
    for ti, (q1, q2) in zip(t, q):
        ex = l1 * math.sin(q1)
        ey = -l1 * math.cos(q1)
        tx = ex + l2 * math.sin(q1 + q2)
        ty = ey - l2 * math.cos(q1 + q2)
        px = [*world_to_pixels(ex, ey), *world_to_pixels(tx, ty)]
        px = [v + rng.normal(0.0, jitter_px) for v in px]
        rows.append((ti, *PIVOT_PX, *px))

    marker_path = out_dir / "markers.csv"
    with marker_path.open("w") as fh:
        fh.write("# double pendulum marker track, 400 fps, pixel units\n")
        fh.write("t,x0,y0,x1,y1,x2,y2\n")
        for row in rows:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")

    # measure link lengths the way a user would: mean marker separation
    imported = import_double_pendulum(np.array(rows), 1.0 / PX_PER_M)
    nominal = NOMINAL_TEMPLATE.format(
        l1=float(imported.metadata["l1_measured"]),
        l2=float(imported.metadata["l2_measured"]),
    )
    (out_dir / "nominal_model.txt").write_text(nominal)
    return marker_path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--duration", type=float, default=2.5)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--jitter", type=float, default=0.3, help="pixel noise sigma")
    args = ap.parse_args()
    path = generate(args.out, args.duration, args.seed, args.jitter)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
