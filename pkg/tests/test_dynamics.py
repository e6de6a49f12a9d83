import math

import numpy as np
import pytest

from hybridsim.dual import gradient, real
from hybridsim.dynamics import (
    SimulationError,
    bias_forces,
    forward_dynamics,
    integrate_step,
    mass_matrix,
    rollout,
    rollout_states,
    total_energy,
)
from hybridsim.geometry import quat_to_matrix
from hybridsim.models import parse_model
from hybridsim.neural import parse_blueprint

from conftest import central_diff

DP_TEXT = """
chain {
  link { mass=1.0, length=0.5, com=0.25, inertia_zz=0.02, damping=0.0 }
  link { mass=0.7, length=0.4, com=0.2, inertia_zz=0.01, damping=0.0 }
  gravity=9.81
}
"""

SP_TEXT = """
chain { link { mass=2.0, length=0.8, damping=0.0 } gravity=9.81 }
"""

CUBE_TEXT = """
free_body { mass=1.0, inertia=[0.002, 0.003, 0.004], half_extents=[0.05, 0.05, 0.05] }
gravity=9.81
"""


@pytest.fixture
def dp():
    return parse_model(DP_TEXT)


@pytest.fixture
def sp():
    return parse_model(SP_TEXT)


@pytest.fixture
def cube():
    return parse_model(CUBE_TEXT)


def closed_form_two_link(m1, l1, c1, I1, m2, c2, I2, q2):
    """Textbook planar two-link inertia matrix (independent derivation)."""
    M11 = m1 * c1**2 + I1 + m2 * (l1**2 + c2**2 + 2 * l1 * c2 * math.cos(q2)) + I2
    M12 = m2 * (c2**2 + l1 * c2 * math.cos(q2)) + I2
    M22 = m2 * c2**2 + I2
    return np.array([[M11, M12], [M12, M22]])


def test_single_pendulum_mass_matrix(sp):
    M = mass_matrix(sp, [0.4])
    assert math.isclose(M[0][0], 2.0 * 0.8**2, rel_tol=1e-9)


def test_double_pendulum_mass_matrix_matches_closed_form(dp):
    rng = np.random.default_rng(0)
    for _ in range(25):
        q = rng.uniform(-math.pi, math.pi, size=2)
        M = np.array(mass_matrix(dp, list(q)))
        ref = closed_form_two_link(1.0, 0.5, 0.25, 0.02, 0.7, 0.2, 0.01, q[1])
        assert np.allclose(M, ref, rtol=1e-12)


def test_mass_matrix_symmetric_and_choleskyable(dp):
    rng = np.random.default_rng(1)
    for _ in range(1000):
        q = rng.uniform(-2 * math.pi, 2 * math.pi, size=2)
        M = np.array(mass_matrix(dp, list(q)))
        assert np.array_equal(M, M.T)
        np.linalg.cholesky(M)


def test_bias_zero_without_motion_gravity_damping(dp):
    m0 = dp.with_values([])
    m0.gravity = 0.0
    b = bias_forces(m0, [0.7, -1.1], [0.0, 0.0])
    assert b == [0.0, 0.0]


def test_bias_zero_at_hanging_rest(dp):
    assert bias_forces(dp, [0.0, 0.0], [0.0, 0.0]) == [0.0, 0.0]


def test_single_pendulum_follows_closed_form_ode(sp):
    # independent oracle: qdd = -(g / l) * sin(q)
    for q in [math.pi / 2, 0.3, -1.2]:
        qdd = forward_dynamics(sp, [q], [0.0])
        assert math.isclose(qdd[0], -(9.81 / 0.8) * math.sin(q), rel_tol=1e-9)


def test_double_pendulum_equilibrium(dp):
    qdd = forward_dynamics(dp, [0.0, 0.0], [0.0, 0.0])
    assert qdd == [0.0, 0.0]


def test_free_fall_acceleration(cube):
    qdd = forward_dynamics(cube, [0, 0, 5, 1, 0, 0, 0], [0, 0, 0, 0, 0, 0])
    assert qdd == [0.0, 0.0, -9.81, 0.0, 0.0, 0.0]


def test_torque_free_tumbling_conserves_energy_and_momentum(cube):
    cube.gravity = 0.0
    w0 = [0.6, 0.15, -0.4]
    traj = rollout(cube, None, [0, 0, 0, 1, 0, 0, 0], [0, 0, 0, *w0], 100000, 1e-5)

    def momentum(i):
        R = np.array(quat_to_matrix(list(traj.q[i][3:7])))
        I_w = R @ np.diag(cube.free_body.inertia) @ R.T
        return I_w @ traj.qd[i][3:6]

    E0 = total_energy(cube, list(traj.q[0]), list(traj.qd[0]))
    L0 = momentum(0)
    for i in range(0, traj.n, 5000):
        E = total_energy(cube, list(traj.q[i]), list(traj.qd[i]))
        assert abs(E - E0) / abs(E0) < 1e-6
        assert np.linalg.norm(momentum(i) - L0) / np.linalg.norm(L0) < 1e-6


def test_integrate_step_constant_velocity(sp):
    q, qd = integrate_step(sp, [0.0], [1.0], [0.0], 0.1)
    assert q == [0.1] and qd == [1.0]


def test_integrate_step_free_fall_matches_kinematics(cube):
    q = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
    qd = [0.0] * 6
    dt, n = 1e-3, 1000
    for _ in range(n):
        q, qd = integrate_step(cube, q, qd, [0, 0, -9.81, 0, 0, 0], dt)
    # semi-implicit Euler drops g*dt^2*n(n+1)/2 exactly
    exact_discrete = -9.81 * dt * dt * n * (n + 1) / 2.0
    assert math.isclose(q[2], exact_discrete, rel_tol=1e-12)
    assert abs(q[2] - (-0.5 * 9.81 * 1.0**2)) < 9.81 * 1.0 * dt


def test_integrate_step_rejects_zero_dt(sp):
    with pytest.raises(SimulationError):
        integrate_step(sp, [0.0], [0.0], [0.0], 0.0)


def test_rollout_fixed_point(dp):
    m0 = dp.with_values([])
    m0.gravity = 0.0
    traj = rollout(m0, None, [0.3, 0.4], [0.0, 0.0], 50, 1e-3)
    assert np.all(traj.q == [0.3, 0.4])
    assert np.all(traj.qd == 0.0)


def test_rollout_energy_bounded_over_five_seconds(dp):
    traj = rollout(dp, None, [math.pi / 2, 0.0], [0.0, 0.0], 50000, 1e-4)
    e_rest = total_energy(dp, [0.0, 0.0], [0.0, 0.0])
    e0 = total_energy(dp, list(traj.q[0]), list(traj.qd[0]))
    scale = abs(e0 - e_rest)
    for i in range(0, traj.n, 1000):
        e = total_energy(dp, list(traj.q[i]), list(traj.qd[i]))
        assert abs(e - e0) / scale < 0.01


def test_rollout_real_parts_identical_under_duals():
    m = parse_model("""
chain {
  link { mass=1.0 free(0.1, 5.0), length=0.5 free(0.1, 2.0), damping=0.03 }
  link { mass=0.7 free(0.1, 5.0), length=0.4, damping=0.03 }
  gravity=9.81
}
""")
    q0, qd0 = [1.0, -0.3], [0.2, 0.0]
    plain = rollout_states(m, None, q0, qd0, 200, 1e-3)

    from hybridsim.dual import seed_vector
    theta = seed_vector(m.free_values())
    dual_states = rollout_states(m.with_values(theta), None, q0, qd0, 200, 1e-3)
    for (q_p, qd_p), (q_d, qd_d) in zip(plain, dual_states):
        for a, b in zip(q_p + qd_p, q_d + qd_d):
            assert real(a) == real(b)


def test_rollout_deterministic(dp):
    a = rollout(dp, None, [1.0, 0.5], [0.1, -0.2], 500, 1e-3)
    b = rollout(dp, None, [1.0, 0.5], [0.1, -0.2], 500, 1e-3)
    assert np.array_equal(a.q, b.q) and np.array_equal(a.qd, b.qd)


def test_rollout_error_carries_step_index(sp):
    with pytest.raises(SimulationError, match="steps"):
        rollout(sp, None, [0.0], [0.0], 0, 1e-3)


def test_total_energy_reference_and_linearity(dp):
    e_hang = total_energy(dp, [0.0, 0.0], [0.0, 0.0])
    # hanging at rest is potential-only: -(m1 g c1 + m2 g (l1 + c2))
    expected = -(1.0 * 9.81 * 0.25 + 0.7 * 9.81 * (0.5 + 0.2))
    assert math.isclose(e_hang, expected, rel_tol=1e-12)

    doubled = parse_model(DP_TEXT)
    for link in doubled.links:
        link.mass *= 2
        link.inertia_zz *= 2
    state_q, state_qd = [0.9, -0.3], [1.1, 0.4]
    assert math.isclose(
        total_energy(doubled, state_q, state_qd),
        2.0 * total_energy(dp, state_q, state_qd),
        rel_tol=1e-12,
    )


def test_single_pendulum_energy_constant_on_fine_grid(sp):
    traj = rollout(sp, None, [math.pi / 2], [0.0], 50000, 1e-5)
    e_rest = total_energy(sp, [0.0], [0.0])
    e0 = total_energy(sp, list(traj.q[0]), list(traj.qd[0]))
    scale = abs(e0 - e_rest)
    for i in range(0, traj.n, 2500):
        e = total_energy(sp, list(traj.q[i]), list(traj.qd[i]))
        assert abs(e - e0) / scale < 1e-3


def test_rollout_gradient_matches_finite_differences():
    m = parse_model("""
chain {
  link { mass=1.0 free(0.1, 5.0), length=0.5 free(0.1, 2.0), damping=0.02 }
  link { mass=0.7 free(0.1, 5.0), length=0.4 free(0.1, 2.0), damping=0.02 }
  gravity=9.81
}
""")

    def loss(theta):
        states = rollout_states(m.with_values(list(theta)), None,
                                [1.0, -0.4], [0.0, 0.3], 100, 1e-3)
        acc = 0.0
        for q, qd in states[1:]:
            acc = acc + q[0] * q[0] + q[1] * q[1] + 0.1 * (qd[0] * qd[0] + qd[1] * qd[1])
        return acc

    theta0 = m.free_values()
    g = gradient(loss, theta0)
    fd = central_diff(lambda th: float(loss(th)), theta0)
    assert np.abs(g - fd).max() / max(1.0, np.abs(fd).max()) < 1e-4


def test_zero_weight_blueprint_leaves_chain_trajectory_bit_identical(dp):
    bp = parse_blueprint("""
attach "joint_damping_0" { inputs = [q0, qd0, qd1]; hidden = [8]; output = 1; seed = 3 }
attach "joint_damping_1" { inputs = [q1, qd1]; hidden = [4]; output = 1; seed = 4 }
""").zeroed()
    base = rollout(dp, None, [1.1, 0.2], [0.0, -0.1], 400, 1e-3)
    aug = rollout(dp, bp, [1.1, 0.2], [0.0, -0.1], 400, 1e-3)
    assert np.array_equal(base.q, aug.q)
    assert np.array_equal(base.qd, aug.qd)


def test_nonzero_weight_blueprint_changes_chain_trajectory(dp):
    bp = parse_blueprint("""
attach "joint_damping_0" { inputs = [q0, qd0, qd1]; hidden = [8]; output = 1; weights = [0.05] }
""".replace("[0.05]", "[" + ", ".join(["0.05"] * 41) + "]"))
    base = rollout(dp, None, [1.1, 0.2], [0.0, -0.1], 200, 1e-3)
    aug = rollout(dp, bp, [1.1, 0.2], [0.0, -0.1], 200, 1e-3)
    assert not np.array_equal(base.q, aug.q)


def test_singular_mass_matrix_raises():
    m = parse_model("chain { link { mass=1e-300, length=1e-8 } }")
    m.links[0].mass = 0.0
    m.links[0].inertia_zz = 0.0
    with pytest.raises(SimulationError, match="singular"):
        forward_dynamics(m, [0.1], [0.0])
