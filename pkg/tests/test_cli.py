import json
import math
from pathlib import Path

import numpy as np
import pytest

from hybridsim.cli import main as cli
from hybridsim.models import parse_model
from hybridsim.sysid import IdentificationProblem, ObjectiveConfig
from hybridsim.trajectory import read_trajectory

PENDULUM = """
chain { link { mass=1.0, length=0.7, com=0.7 free(0.1, 2.0), inertia_zz=1e-6, damping=0.05 } gravity=9.81 }
"""

CUBE = """
free_body { mass=1.0, inertia=[0.0017, 0.0017, 0.0017], half_extents=[0.05, 0.05, 0.05] }
gravity=9.81
contact { stiffness=1e5, damping=3.0, mu0=0.4, eps_v=1e-2 }
"""


@pytest.fixture
def pendulum_file(tmp_path):
    p = tmp_path / "pendulum.txt"
    p.write_text(PENDULUM)
    return str(p)


@pytest.fixture
def cube_file(tmp_path):
    p = tmp_path / "cube.txt"
    p.write_text(CUBE)
    return str(p)


def test_simulate_row_count_and_determinism(tmp_path, pendulum_file):
    out1 = tmp_path / "a.csv"
    out2 = tmp_path / "b.csv"
    base = ["simulate", "--model", pendulum_file, "--init-state", "1.0,0.0",
            "--duration", "0.5", "--dt", "1e-3", "--seed", "1"]
    assert cli(base + ["--out", str(out1)]) == 0
    assert cli(base + ["--out", str(out2)]) == 0
    rows = [l for l in out1.read_text().splitlines() if l and not l.startswith("#")]
    assert len(rows) == 1 + 501  # header plus initial state plus 500 steps
    assert out1.read_text() == out2.read_text()


def test_manifest_reproduces_run(tmp_path, pendulum_file):
    out = tmp_path / "run.csv"
    cmd = ["simulate", "--model", pendulum_file, "--init-state", "0.4,-0.1",
           "--duration", "0.2", "--dt", "1e-3", "--out", str(out), "--seed", "9"]
    assert cli(cmd) == 0
    manifest = json.loads((tmp_path / "run.csv.manifest.json").read_text())
    assert manifest["command"] == "simulate"
    first = out.read_bytes()

    cfg = manifest["config"]
    rebuilt = ["simulate"]
    for key in ("model", "init_state", "duration", "dt", "out", "seed"):
        rebuilt += [f"--{key.replace('_', '-')}", str(cfg[key])]
    out.unlink()
    assert cli(rebuilt) == 0
    assert out.read_bytes() == first


def test_simulate_records_input_hashes(tmp_path, pendulum_file):
    out = tmp_path / "r.csv"
    assert cli(["simulate", "--model", pendulum_file, "--init-state", "1,0",
                "--duration", "0.1", "--dt", "1e-3", "--out", str(out)]) == 0
    manifest = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    assert pendulum_file in manifest["inputs"]
    assert len(manifest["inputs"][pendulum_file]) == 64


def test_cube_drop_rests_at_static_compliance(tmp_path, cube_file):
    out = tmp_path / "drop.csv"
    assert cli(["simulate", "--model", cube_file,
                "--init-state", "0,0,0.0505,1,0,0,0,0,0,0,0,0,0",
                "--duration", "2.0", "--dt", "1e-3", "--out", str(out)]) == 0
    traj = read_trajectory(out)
    depth_static = (9.81 / (4 * 1e5)) ** (2.0 / 3.0)
    assert abs(traj.q[-1][2] - (0.05 - depth_static)) < 0.5 * depth_static


def test_generate_target_cube_bounces_and_slides(tmp_path, cube_file):
    out = tmp_path / "target.csv"
    assert cli(["generate-target", "--model", cube_file, "--contact", "pgs",
                "--init-state", "0,0,0.07,1,0,0,0,1.2,0,0,0,0,0",
                "--duration", "0.8", "--dt", "1e-3", "--out", str(out)]) == 0
    traj = read_trajectory(out)
    assert traj.metadata["source"] == "target"
    # slides to the right, never penetrates more than a millimetre
    assert traj.q[-1][0] > 0.1
    assert traj.q[:, 2].min() > 0.05 - 1e-3
    # airborne start: free fall matches closed-form kinematics
    k = 20
    dt = 1e-3
    expect = 0.07 - 9.81 * dt * dt * k * (k + 1) / 2.0
    assert math.isclose(traj.q[k][2], expect, rel_tol=1e-9)


def test_generate_target_for_chain_equals_simulate(tmp_path, pendulum_file):
    sim = tmp_path / "sim.csv"
    tgt = tmp_path / "tgt.csv"
    base = ["--model", pendulum_file, "--init-state", "1.0,0.0",
            "--duration", "0.3", "--dt", "1e-3"]
    assert cli(["simulate", *base, "--out", str(sim)]) == 0
    assert cli(["generate-target", *base, "--contact", "pgs", "--out", str(tgt)]) == 0
    a = read_trajectory(sim)
    b = read_trajectory(tgt)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qd, b.qd)


def test_identify_recovers_pendulum_and_writes_model(tmp_path, pendulum_file):
    tgt = tmp_path / "target.csv"
    assert cli(["generate-target", "--model", pendulum_file,
                "--init-state", "1.0,0.0", "--duration", "0.6", "--dt", "1e-3",
                "--out", str(tgt)]) == 0

    # mis-scaled start: nominal com is written into the model file
    start_model = tmp_path / "start.txt"
    start_model.write_text(PENDULUM.replace("com=0.7", "com=0.35"))

    report = tmp_path / "report.json"
    fitted = tmp_path / "fitted.txt"
    assert cli(["identify", "--model", str(start_model), "--target", str(tgt),
                "--window", "10", "--reg", "0", "--pbh-workers", "1",
                "--restarts", "1", "--seed", "0", "--max-iters", "60",
                "--serial",
                "--out-report", str(report), "--out-model", str(fitted)]) == 0

    doc = json.loads(report.read_text())
    assert len(doc["restarts"]) == 1
    assert doc["best_loss"] < 1e-10
    refit = parse_model(fitted.read_text())
    assert abs(refit.links[0].com_offset - 0.7) / 0.7 < 1e-3
    assert doc["parameter_names"] == ["link0.com"]


def test_evaluate_self_is_zero_and_matches_library_loss(tmp_path, pendulum_file):
    tgt = tmp_path / "target.csv"
    assert cli(["generate-target", "--model", pendulum_file,
                "--init-state", "1.0,0.0", "--duration", "0.4", "--dt", "1e-3",
                "--out", str(tgt)]) == 0
    out = tmp_path / "errors.csv"
    assert cli(["evaluate", "--model", pendulum_file, "--target", str(tgt),
                "--window", "10", "--reg", "0", "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "errors.csv.summary.json").read_text())
    assert summary["loss"] < 1e-18
    for v in summary["rmse"].values():
        assert v < 1e-10

    model = parse_model(PENDULUM)
    target = read_trajectory(tgt)
    problem = IdentificationProblem(model, None, target,
                                    ObjectiveConfig(window_length=10))
    lib_loss = problem.loss(list(problem.parameter_vector().values))
    assert math.isclose(summary["loss"], lib_loss, rel_tol=1e-12, abs_tol=1e-300)


def test_failure_removes_outputs_and_exits_nonzero(tmp_path, pendulum_file):
    out = tmp_path / "never.csv"
    code = cli(["simulate", "--model", str(tmp_path / "missing.txt"),
                "--init-state", "1,0", "--duration", "0.1", "--dt", "1e-3",
                "--out", str(out)])
    assert code == 1
    assert not out.exists()
    assert not (tmp_path / "never.csv.manifest.json").exists()


def test_dimension_mismatch_cleans_up(tmp_path, pendulum_file, cube_file):
    tgt = tmp_path / "tgt.csv"
    assert cli(["generate-target", "--model", pendulum_file,
                "--init-state", "1.0,0.0", "--duration", "0.2", "--dt", "1e-3",
                "--out", str(tgt)]) == 0
    report = tmp_path / "rep.json"
    fitted = tmp_path / "fit.txt"
    code = cli(["identify", "--model", cube_file, "--target", str(tgt),
                "--out-report", str(report), "--out-model", str(fitted),
                "--serial"])
    assert code == 1
    assert not report.exists() and not fitted.exists()
    assert not (tmp_path / "rep.json.manifest.json").exists()


def test_help_for_every_subcommand(capsys):
    for sub in ("simulate", "generate-target", "identify", "evaluate"):
        with pytest.raises(SystemExit) as exc:
            cli([sub, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--model" in out
