"""Cube-versus-ground contact.

Two contact paths coexist.  The differentiable path combines a compliant
Hunt-Crossley normal force with a smooth-Coulomb friction term that carries
the ``contact_friction`` neural attachment; it is scalar-generic and runs
inside the hybrid simulator.  The non-differentiable path is a
velocity-level projected Gauss-Seidel impulse stepper used only to
manufacture target trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dual import power, real, tanh
from .geometry import mat_vec, quat_multiply, quat_normalize, quat_to_matrix
from .models import ContactParams, MultiBodyModel
from .neural import NeuralRegistry, resolve
from .trajectory import Trajectory

__all__ = [
    "ContactPoint",
    "detect_contacts",
    "hunt_crossley_normal",
    "neural_friction",
    "pgs_target_step",
    "pgs_rollout",
    "FRICTION_ATTACHMENT",
    "FRICTION_INPUT_NAMES",
]

FRICTION_ATTACHMENT = "contact_friction"
FRICTION_INPUT_NAMES = ("contact_vt_x", "contact_vt_y", "contact_fn", "contact_depth")

_CORNER_SIGNS = [
    (sx, sy, sz) for sx in (-1.0, 1.0) for sy in (-1.0, 1.0) for sz in (-1.0, 1.0)
]


@dataclass
class ContactPoint:
    """One corner touching the ground plane.

    ``lever`` is the world-frame vector from the body origin to the contact
    point; ``penetration_rate`` is positive while sinking deeper.
    """

    world_position: list
    penetration_depth: object
    penetration_rate: object
    normal: tuple
    tangential_velocity: list
    lever: list


def detect_contacts(
    position, quat, lin_vel, ang_vel, half_extents, ground_height=0.0
) -> list[ContactPoint]:
    """Corner-versus-plane candidates: one point per cube corner at or
    below the ground plane.  Scalar-generic; airborne bodies yield []."""
    R = quat_to_matrix(quat)
    hx, hy, hz = half_extents
    contacts = []
    for sx, sy, sz in _CORNER_SIGNS:
        cx, cy, cz = sx * hx, sy * hy, sz * hz
        # World height of the corner decides activation (real-part compare).
        lever = mat_vec(R, [cx, cy, cz])
        z_w = position[2] + lever[2]
        if z_w <= ground_height:
            v_c = [
                lin_vel[0] + ang_vel[1] * lever[2] - ang_vel[2] * lever[1],
                lin_vel[1] + ang_vel[2] * lever[0] - ang_vel[0] * lever[2],
                lin_vel[2] + ang_vel[0] * lever[1] - ang_vel[1] * lever[0],
            ]
            contacts.append(
                ContactPoint(
                    world_position=[
                        position[0] + lever[0],
                        position[1] + lever[1],
                        z_w,
                    ],
                    penetration_depth=ground_height - z_w,
                    penetration_rate=-v_c[2],
                    normal=(0.0, 0.0, 1.0),
                    tangential_velocity=[v_c[0], v_c[1]],
                    lever=lever,
                )
            )
    return contacts


def hunt_crossley_normal(params: ContactParams, depth, rate):
    """Compliant normal force k * d^{3/2} * (1 + c * d_rate), clamped at zero.

    Zero exactly at zero depth, continuous in both arguments, and never
    adhesive: rapid withdrawal cannot pull the body down.
    """
    if real(depth) < 0.0:
        raise ValueError(f"negative penetration depth {real(depth)}")
    f = params.stiffness * power(depth, 1.5) * (1.0 + params.damping * rate)
    if f < 0.0:
        return f * 0.0
    return f


def neural_friction(params: ContactParams, registry, tangential_velocity, f_n, depth):
    """Tangential force: smooth Coulomb plus the ``contact_friction`` network.

    The analytical part is -mu0 * f_n * tanh(v_t / eps_v) per tangent
    component, so zero network weights reproduce pure smoothed Coulomb
    friction.  Records the network inputs (two slip velocity components,
    normal force, penetration depth) before resolving.
    """
    if real(f_n) < 0.0:
        raise ValueError(f"negative normal force {real(f_n)}")
    vx, vy = tangential_velocity
    phi = [
        -params.mu0 * f_n * tanh(vx / params.eps_v),
        -params.mu0 * f_n * tanh(vy / params.eps_v),
    ]
    if registry is None:
        return phi
    registry.record(FRICTION_INPUT_NAMES[0], vx)
    registry.record(FRICTION_INPUT_NAMES[1], vy)
    registry.record(FRICTION_INPUT_NAMES[2], f_n)
    registry.record(FRICTION_INPUT_NAMES[3], depth)
    return resolve(FRICTION_ATTACHMENT, phi, registry)


def compliant_contact_wrenches(
    params: ContactParams,
    registry: NeuralRegistry | None,
    contacts: list[ContactPoint],
):
    """(force, lever) pairs for the compliant path, one per contact point."""
    wrenches = []
    for cp in contacts:
        f_n = hunt_crossley_normal(params, cp.penetration_depth, cp.penetration_rate)
        f_t = neural_friction(
            params, registry, cp.tangential_velocity, f_n, cp.penetration_depth
        )
        wrenches.append(([f_t[0], f_t[1], f_n], cp.lever))
    return wrenches


# -- complementarity-style target stepper (plain floats only) ---------------


def pgs_target_step(
    model: MultiBodyModel,
    lin_vel: np.ndarray,
    ang_vel: np.ndarray,
    rot: np.ndarray,
    contacts: list[ContactPoint],
    dt: float,
    mu: float | None = None,
    iterations: int = 32,
    beta: float = 0.2,
    slop: float = 1e-5,
):
    """Projected Gauss-Seidel impulse solve against the ground plane.

    Normal impulses stay nonnegative and drive the post-step normal
    velocity to the Baumgarte bias beta*depth/dt; friction impulses are
    box-clamped per tangent axis at mu times the normal impulse.  Returns
    corrected (linear, angular) velocities.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    fb = model.free_body
    if mu is None:
        mu = model.contact.mu0 if model.contact is not None else 0.0
    inv_m = 1.0 / fb.mass
    rot = np.asarray(rot, dtype=float)
    I_world = rot @ np.diag(fb.inertia) @ rot.T
    inv_I = np.linalg.inv(I_world).tolist()

    v = [float(x) for x in lin_vel]
    w = [float(x) for x in ang_vel]
    if not contacts:
        return np.array(v), np.array(w)

    # Unit axes: k = 0, 1 are the tangent directions, 2 the ground normal.
    levers = [[real(c) for c in cp.lever] for cp in contacts]
    depths = [real(cp.penetration_depth) for cp in contacts]
    nc = len(contacts)
    lam_n = [0.0] * nc
    lam_t = [[0.0, 0.0] for _ in range(nc)]

    def cross(a, b):
        return (
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )

    def inv_I_mul(x):
        return (
            inv_I[0][0] * x[0] + inv_I[0][1] * x[1] + inv_I[0][2] * x[2],
            inv_I[1][0] * x[0] + inv_I[1][1] * x[1] + inv_I[1][2] * x[2],
            inv_I[2][0] * x[0] + inv_I[2][1] * x[1] + inv_I[2][2] * x[2],
        )

    def eff_mass(r, axis_index):
        axis = [0.0, 0.0, 0.0]
        axis[axis_index] = 1.0
        rxa = cross(r, axis)
        tmp = inv_I_mul(rxa)
        return 1.0 / (
            inv_m + rxa[0] * tmp[0] + rxa[1] * tmp[1] + rxa[2] * tmp[2]
        )

    m_n = [eff_mass(r, 2) for r in levers]
    m_t = [(eff_mass(r, 0), eff_mass(r, 1)) for r in levers]
    bias = [beta * max(d - slop, 0.0) / dt for d in depths]

    def apply_impulse(r, axis_index, dlam):
        v[axis_index] += dlam * inv_m
        p = [0.0, 0.0, 0.0]
        p[axis_index] = dlam
        torque = cross(r, p)
        dw = inv_I_mul(torque)
        w[0] += dw[0]
        w[1] += dw[1]
        w[2] += dw[2]

    def point_vel(r, axis_index):
        cw = cross(w, r)
        return v[axis_index] + cw[axis_index]

    for _ in range(iterations):
        for i in range(nc):
            r = levers[i]
            dlam = m_n[i] * (bias[i] - point_vel(r, 2))
            new_lam = max(0.0, lam_n[i] + dlam)
            dlam = new_lam - lam_n[i]
            lam_n[i] = new_lam
            if dlam != 0.0:
                apply_impulse(r, 2, dlam)
        for i in range(nc):
            r = levers[i]
            limit = mu * lam_n[i]
            for k in range(2):
                dlam = -m_t[i][k] * point_vel(r, k)
                new_lam = min(limit, max(-limit, lam_t[i][k] + dlam))
                dlam = new_lam - lam_t[i][k]
                lam_t[i][k] = new_lam
                if dlam != 0.0:
                    apply_impulse(r, k, dlam)

    if not all(math.isfinite(x) for x in (*v, *w)):
        raise ArithmeticError("non-finite velocities out of the impulse solve")
    return np.array(v), np.array(w)


def pgs_rollout(
    model: MultiBodyModel,
    q0,
    qd0,
    steps: int,
    dt: float,
    mu: float | None = None,
    iterations: int = 32,
    beta: float = 0.2,
) -> Trajectory:
    """Target-trajectory generator: gravity, impulse contact, symplectic
    Euler.  Plain floats throughout; not differentiable by design."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    fb = model.free_body
    if fb is None:
        raise ValueError("impulse stepper only applies to free-body models")
    g = model.gravity
    pos = [float(x) for x in q0[:3]]
    quat = quat_normalize([float(x) for x in q0[3:7]])
    v = np.array([float(x) for x in qd0[:3]])
    w = np.array([float(x) for x in qd0[3:6]])
    I_body = np.diag(fb.inertia)

    qs = np.zeros((steps + 1, 7))
    qds = np.zeros((steps + 1, 6))
    qs[0] = [*pos, *quat]
    qds[0] = [*v, *w]

    for k in range(steps):
        R = np.array(quat_to_matrix(quat))
        contacts = detect_contacts(pos, quat, list(v), list(w), fb.half_extents)
        # Free velocity update: gravity plus gyroscopic torque.
        I_world = R @ I_body @ R.T
        w = w + dt * np.linalg.solve(I_world, -np.cross(w, I_world @ w))
        v = v + np.array([0.0, 0.0, -g]) * dt
        if contacts:
            v, w = pgs_target_step(
                model, v, w, R, contacts, dt, mu=mu,
                iterations=iterations, beta=beta,
            )
        pos = [pos[i] + v[i] * dt for i in range(3)]
        dq = quat_multiply([0.0, w[0], w[1], w[2]], quat)
        quat = quat_normalize([quat[i] + 0.5 * dt * dq[i] for i in range(4)])
        qs[k + 1] = [*pos, *quat]
        qds[k + 1] = [*v, *w]
        if not np.all(np.isfinite(qs[k + 1])):
            raise ArithmeticError(f"non-finite state at step {k + 1}")

    t = np.arange(steps + 1) * dt
    return Trajectory(
        dt=dt, t=t, q=qs, qd=qds,
        metadata={"source": "target", "model": "free_body"},
    )
