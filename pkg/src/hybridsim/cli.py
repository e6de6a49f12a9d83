"""Command-line front end.

Four subcommands: ``simulate`` rolls out the hybrid model, ``generate-target``
produces target data (impulse-based contact or the compliant model),
``identify`` fits free parameters and network weights to a target trajectory,
``evaluate`` reports per-step state errors and the fitting loss for a
model/target pair.  Every run writes a manifest JSON first (resolved
configuration, seed, input hashes) sufficient to reproduce it; on failure all
outputs of the failed run are removed and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import secrets
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import rollout, total_energy
from .contact import pgs_rollout
from .models import parse_model, serialize_model
from .neural import NeuralBlueprint, parse_blueprint, serialize_blueprint
from .sysid import IdentificationProblem, ObjectiveConfig, pbh_search
from .trajectory import Trajectory, read_trajectory, write_trajectory

_LMA_KEYS = ("max_iters", "lambda0", "lambda_up", "lambda_down", "tol_grad", "tol_step")
_PBH_KEYS = ("perturb_scale", "parallel")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _parse_state(text: str, model) -> tuple[list[float], list[float]]:
    vals = [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    nq, nv = model.nq, model.dof
    if len(vals) != nq + nv:
        raise SystemExit(
            f"error: --init-state needs {nq + nv} numbers "
            f"({nq} positions, {nv} velocities), got {len(vals)}"
        )
    return vals[:nq], vals[nq:]


def _load_blueprint(path: str | None) -> NeuralBlueprint | None:
    if path is None:
        return None
    return parse_blueprint(Path(path).read_text())


class _Run:
    """Tracks declared outputs so failures can clean up after themselves."""

    def __init__(self, command: str, args: argparse.Namespace, outputs: list[str]):
        self.command = command
        self.args = args
        self.outputs = [Path(p) for p in outputs]
        self.seed = args.seed if getattr(args, "seed", None) is not None else (
            secrets.randbits(31)
        )

    def manifest_path(self) -> Path:
        return self.outputs[0].with_name(self.outputs[0].name + ".manifest.json")

    def write_manifest(self, inputs: list[str]):
        config = {
            k: v for k, v in vars(self.args).items() if k != "func" and v is not None
        }
        config["seed"] = self.seed
        manifest = {
            "command": self.command,
            "version": __version__,
            "config": config,
            "inputs": {p: _sha256(Path(p)) for p in inputs},
            "outputs": [str(p) for p in self.outputs],
        }
        self.manifest_path().write_text(json.dumps(manifest, indent=2) + "\n")

    def cleanup(self):
        for p in [*self.outputs, self.manifest_path()]:
            try:
                p.unlink()
            except FileNotFoundError:
                pass


def _cmd_simulate(args) -> None:
    model = parse_model(Path(args.model).read_text())
    blueprint = _load_blueprint(args.blueprint)
    run = _Run("simulate", args, [args.out])
    run.write_manifest([args.model] + ([args.blueprint] if args.blueprint else []))
    q0, qd0 = _parse_state(args.init_state, model)
    steps = max(1, int(round(args.duration / args.dt)))
    traj = rollout(model, blueprint, q0, qd0, steps, args.dt)
    traj.metadata["source"] = "simulate"
    write_trajectory(traj, args.out)


def _cmd_generate_target(args) -> None:
    model = parse_model(Path(args.model).read_text())
    blueprint = _load_blueprint(args.blueprint)
    run = _Run("generate-target", args, [args.out])
    run.write_manifest([args.model] + ([args.blueprint] if args.blueprint else []))
    q0, qd0 = _parse_state(args.init_state, model)
    steps = max(1, int(round(args.duration / args.dt)))
    if args.contact == "pgs" and not model.is_chain:
        traj = pgs_rollout(model, q0, qd0, steps, args.dt)
    else:
        traj = rollout(model, blueprint, q0, qd0, steps, args.dt)
    traj.metadata["source"] = "target"
    write_trajectory(traj, args.out)


def _parse_weights(args, target):
    text = getattr(args, "state_weights", None)
    if not text:
        return None
    vals = np.array([float(v) for v in text.split(",") if v.strip()])
    if vals.shape[0] != target.nq + target.nv:
        raise SystemExit(
            f"error: --state-weights needs {target.nq + target.nv} values, "
            f"got {vals.shape[0]}"
        )
    return vals


def _solver_options(args) -> tuple[dict, dict]:
    """Merge precedence: CLI flag > options file > default."""
    from_file: dict = {}
    if getattr(args, "options", None):
        from_file = json.loads(Path(args.options).read_text())
        unknown = set(from_file) - set(_LMA_KEYS) - set(_PBH_KEYS)
        if unknown:
            raise SystemExit(f"error: unknown solver options {sorted(unknown)}")
    lma = {k: from_file[k] for k in _LMA_KEYS if k in from_file}
    pbh = {k: from_file[k] for k in _PBH_KEYS if k in from_file}
    if getattr(args, "max_iters", None) is not None:
        lma["max_iters"] = args.max_iters
    if getattr(args, "serial", False):
        pbh["parallel"] = "serial"
    return lma, pbh


def _cmd_identify(args) -> None:
    model = parse_model(Path(args.model).read_text())
    blueprint = _load_blueprint(args.blueprint)
    target = read_trajectory(args.target)
    out_blueprint = args.out_blueprint
    if out_blueprint is None and blueprint is not None and blueprint.n_weights:
        out_blueprint = str(Path(args.out_model).with_suffix(".blueprint"))
    outputs = [args.out_report, args.out_model]
    if out_blueprint:
        outputs.append(out_blueprint)
    run = _Run("identify", args, outputs)
    inputs = [args.model, args.target]
    if args.blueprint:
        inputs.append(args.blueprint)
    if args.options:
        inputs.append(args.options)
    run.write_manifest(inputs)

    config = ObjectiveConfig(
        regularization=args.reg,
        window_length=args.window,
        substeps=args.substeps,
        state_weights=_parse_weights(args, target),
    )
    problem = IdentificationProblem(model, blueprint, target, config)
    pv = problem.parameter_vector()
    lma_options, pbh_options = _solver_options(args)
    report = pbh_search(
        problem,
        (pv.lower, pv.upper),
        workers=args.pbh_workers,
        budget_restarts=args.restarts,
        master_seed=run.seed,
        initial=pv.values,
        lma_options=lma_options,
        **pbh_options,
    )

    doc = report.to_dict()
    doc["parameter_names"] = pv.names
    doc["config"] = {
        "window": args.window,
        "regularization": args.reg,
        "substeps": args.substeps,
        "pbh_workers": args.pbh_workers,
        "restarts": args.restarts,
        "master_seed": run.seed,
    }
    nn_best = pv.network(report.best_theta)
    doc["network_weight_norm"] = float(np.linalg.norm(nn_best)) if nn_best else 0.0
    Path(args.out_report).write_text(json.dumps(doc, indent=2) + "\n")

    fitted = model.with_values(pv.analytic(report.best_theta))
    Path(args.out_model).write_text(serialize_model(fitted))
    if out_blueprint:
        Path(out_blueprint).write_text(
            serialize_blueprint(blueprint.with_weights(nn_best))
        )


def _cmd_evaluate(args) -> None:
    model = parse_model(Path(args.model).read_text())
    blueprint = _load_blueprint(args.blueprint)
    target = read_trajectory(args.target)
    summary_path = str(Path(args.out).with_name(Path(args.out).name + ".summary.json"))
    run = _Run("evaluate", args, [args.out, summary_path])
    inputs = [args.model, args.target]
    if args.blueprint:
        inputs.append(args.blueprint)
    run.write_manifest(inputs)

    config = ObjectiveConfig(
        regularization=args.reg,
        window_length=args.window,
        substeps=args.substeps,
        state_weights=_parse_weights(args, target),
    )
    problem = IdentificationProblem(model, blueprint, target, config)
    pv = problem.parameter_vector()
    loss = float(problem.loss(pv.values))

    steps = (target.n - 1) * args.substeps
    sim = rollout(
        model, blueprint, list(target.q[0]), list(target.qd[0]),
        steps, target.dt / args.substeps,
    )
    sim_q = sim.q[:: args.substeps]
    sim_qd = sim.qd[:: args.substeps]
    err_q = sim_q - target.q
    # Quaternion sign ambiguity: compare the aligned representative.
    if not model.is_chain:
        dots = np.sum(sim_q[:, 3:7] * target.q[:, 3:7], axis=1)
        flip = dots < 0
        err_q[flip, 3:7] = -sim_q[flip, 3:7] - target.q[flip, 3:7]
    err_qd = sim_qd - target.qd
    err = np.hstack([err_q, err_qd])

    header = (
        ["t"]
        + [f"err_q{i}" for i in range(target.nq)]
        + [f"err_qd{i}" for i in range(target.nv)]
    )
    lines = [",".join(header)]
    for i in range(target.n):
        row = [format(target.t[i], ".17g")] + [
            format(v, ".17g") for v in err[i]
        ]
        lines.append(",".join(row))
    Path(args.out).write_text("\n".join(lines) + "\n")

    rmse = np.sqrt(np.mean(err ** 2, axis=0))
    summary = {
        "loss": loss,
        "rmse": {h: float(v) for h, v in zip(header[1:], rmse)},
        "position_rmse": float(np.sqrt(np.mean(err_q[:, :3] ** 2)))
        if not model.is_chain
        else float(np.sqrt(np.mean(err_q ** 2))),
        "config": {
            "window": args.window,
            "regularization": args.reg,
            "substeps": args.substeps,
        },
    }
    Path(summary_path).write_text(json.dumps(summary, indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridsim",
        description="Differentiable hybrid rigid-body simulation and "
        "trajectory-based parameter identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_sim(p):
        p.add_argument("--model", required=True, help="model description file")
        p.add_argument("--blueprint", help="neural attachment blueprint file")
        p.add_argument(
            "--init-state", required=True,
            help="comma-separated initial state: positions then velocities",
        )
        p.add_argument("--duration", type=float, required=True, help="seconds")
        p.add_argument("--dt", type=float, required=True, help="time step [s]")
        p.add_argument("--out", required=True, help="output trajectory CSV")
        p.add_argument("--seed", type=int, help="master seed recorded in the manifest")

    p_sim = sub.add_parser("simulate", help="roll out the hybrid model")
    add_common_sim(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_gen = sub.add_parser(
        "generate-target", help="produce a target trajectory for identification"
    )
    add_common_sim(p_gen)
    p_gen.add_argument(
        "--contact", choices=("pgs", "compliant"), default="pgs",
        help="contact stepper for free bodies (chains ignore this)",
    )
    p_gen.set_defaults(func=_cmd_generate_target)

    p_id = sub.add_parser("identify", help="fit free parameters to a target")
    p_id.add_argument("--model", required=True)
    p_id.add_argument("--blueprint")
    p_id.add_argument("--target", required=True, help="target trajectory CSV")
    p_id.add_argument("--window", type=int, default=10, help="rollout window length")
    p_id.add_argument("--reg", type=float, default=0.0, help="network weight penalty")
    p_id.add_argument(
        "--state-weights",
        help="comma-separated per-dimension error weights (positions then velocities)",
    )
    p_id.add_argument("--pbh-workers", type=int, default=4)
    p_id.add_argument("--restarts", type=int, default=8, help="total LMA restarts")
    p_id.add_argument("--seed", type=int, help="master seed (random when omitted)")
    p_id.add_argument("--substeps", type=int, default=1)
    p_id.add_argument("--max-iters", type=int, help="LMA iteration cap")
    p_id.add_argument("--options", help="JSON file with solver options")
    p_id.add_argument("--serial", action="store_true", help="disable worker processes")
    p_id.add_argument("--out-report", required=True, help="solve report JSON")
    p_id.add_argument("--out-model", required=True, help="fitted model file")
    p_id.add_argument("--out-blueprint", help="fitted blueprint file")
    p_id.set_defaults(func=_cmd_identify)

    p_ev = sub.add_parser("evaluate", help="per-step errors and loss for a model")
    p_ev.add_argument("--model", required=True)
    p_ev.add_argument("--blueprint")
    p_ev.add_argument("--target", required=True)
    p_ev.add_argument("--window", type=int, default=10)
    p_ev.add_argument("--reg", type=float, default=0.0)
    p_ev.add_argument("--state-weights")
    p_ev.add_argument("--substeps", type=int, default=1)
    p_ev.add_argument("--seed", type=int)
    p_ev.add_argument("--out", required=True, help="per-step error CSV")
    p_ev.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except SystemExit as err:
        if err.code not in (0, None):
            _cleanup_outputs(args)
        raise
    except Exception as err:  # noqa: BLE001 - single CLI failure funnel
        _cleanup_outputs(args)
        print(f"error: {err}", file=sys.stderr)
        return 1


def _cleanup_outputs(args) -> None:
    candidates = []
    for attr in ("out", "out_report", "out_model", "out_blueprint"):
        val = getattr(args, attr, None)
        if val:
            candidates.append(Path(val))
    if getattr(args, "out_model", None) and not getattr(args, "out_blueprint", None):
        candidates.append(Path(args.out_model).with_suffix(".blueprint"))
    extra = []
    for p in candidates:
        extra.append(p.with_name(p.name + ".manifest.json"))
        extra.append(p.with_name(p.name + ".summary.json"))
    for p in candidates + extra:
        try:
            p.unlink()
        except FileNotFoundError:
            pass


if __name__ == "__main__":
    sys.exit(main())
