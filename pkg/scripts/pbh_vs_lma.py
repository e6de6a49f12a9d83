#!/usr/bin/env python3
"""Escape study: randomized-restart search versus a single local solve.

Builds a pendulum-length identification problem whose loss over the length
has two basins (phase aliasing over a long horizon), maps the basins with a
dense parameter sweep, then compares plain LMA started in the poor basin
against parallel basin hopping across many master seeds.

Usage: python scripts/pbh_vs_lma.py --out runs/pbh [--seeds 20]
"""

import argparse
import json
from pathlib import Path

import numpy as np

from hybridsim.dynamics import rollout
from hybridsim.models import parse_model
from hybridsim.sysid import (
    IdentificationProblem,
    ObjectiveConfig,
    eval_residuals,
    lma_solve,
    pbh_search,
)

TRUE_LENGTH = 0.45
POOR_START = 0.19
BOUNDS = (0.15, 1.2)
RELEASE = 2.8
STEPS = 1000
DT = 5e-3


def build_problem():
    true = parse_model(
        f"chain {{ link {{ mass=0.5, length={TRUE_LENGTH}, damping=0.0 }} gravity=9.81 }}"
    )
    target = rollout(true, None, [RELEASE], [0.0], STEPS, DT)
    model = parse_model(
        f"chain {{ link {{ mass=0.5, length={TRUE_LENGTH} "
        f"free({BOUNDS[0]}, {BOUNDS[1]}), damping=0.0 }} gravity=9.81 }}"
    )
    return IdentificationProblem(
        model, None, target, ObjectiveConfig(window_length=STEPS)
    )


def basin_map(problem, n_grid=240):
    """Dense sweep plus discrete descent: which minimum claims each point."""
    grid = np.linspace(BOUNDS[0] + 0.01, BOUNDS[1] - 0.05, n_grid)
    losses = np.array(
        [float((lambda r: r @ r)(eval_residuals(problem, np.array([c])))) for c in grid]
    )

    def descend(i):
        while True:
            if i > 0 and losses[i - 1] < losses[i]:
                i -= 1
            elif i < n_grid - 1 and losses[i + 1] < losses[i]:
                i += 1
            else:
                return i

    owners = np.array([descend(i) for i in range(n_grid)])
    global_idx = int(np.argmin(losses))
    global_points = grid[owners == owners[global_idx]]
    return grid, losses, (float(global_points.min()), float(global_points.max()))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True)
    ap.add_argument("--seeds", type=int, default=20)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    problem = build_problem()
    grid, losses, global_basin = basin_map(problem)
    np.savetxt(
        out / "sweep.csv",
        np.column_stack([grid, losses]),
        delimiter=",", header="length,loss", comments="",
    )
    print(f"global basin: [{global_basin[0]:.3f}, {global_basin[1]:.3f}]")

    bounds = ([BOUNDS[0]], [BOUNDS[1]])
    single = lma_solve(problem, [POOR_START], bounds=bounds, max_iters=30)
    single_in = global_basin[0] <= single.best_theta[0] <= global_basin[1]
    print(f"single LMA from {POOR_START}: length {single.best_theta[0]:.4f} "
          f"loss {single.best_loss:.3f} -> global basin reached: {single_in}")

    hits = 0
    rows = []
    for seed in range(args.seeds):
        rep = pbh_search(
            problem, bounds, workers=4, budget_restarts=6, master_seed=seed,
            parallel="serial", lma_options={"max_iters": 15},
            initial=[POOR_START],
        )
        inside = bool(global_basin[0] <= rep.best_theta[0] <= global_basin[1])
        hits += int(inside)
        rows.append({"seed": seed, "length": float(rep.best_theta[0]),
                     "loss": rep.best_loss, "global_basin": bool(inside)})
        print(f"  seed {seed:2d}: length {rep.best_theta[0]:.4f} "
              f"loss {rep.best_loss:.4g} global={inside}")

    print(f"PBH reached the global basin in {hits}/{args.seeds} runs; "
          f"single LMA: {int(single_in)}/1")
    (out / "study.json").write_text(json.dumps({
        "global_basin": global_basin,
        "single_lma_length": float(single.best_theta[0]),
        "single_lma_in_global": bool(single_in),
        "pbh_hits": hits, "seeds": args.seeds, "runs": rows,
    }, indent=2) + "\n")


if __name__ == "__main__":
    main()
