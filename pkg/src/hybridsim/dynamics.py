"""Forward dynamics and integration, generic over the scalar type.

Chains use minimal coordinates with the inertia matrix assembled from
center-of-mass Jacobians and the bias term (centrifugal, gravity, damping)
from the zero-acceleration inverse dynamics identity.  The free body uses
Newton-Euler with the gyroscopic term evaluated in the body frame.  Both
run unchanged on floats or dual numbers, and both consult the neural
registry: chains resolve a ``joint_damping_<j>`` attachment per joint,
free bodies resolve ``contact_friction`` through the contact module.

Time stepping is semi-implicit Euler at fixed dt: velocities first, then
positions with the updated velocities; quaternions are renormalized every
step.
"""

from __future__ import annotations

import math

import numpy as np

from .contact import compliant_contact_wrenches, detect_contacts
from .dual import cos, real, sin
from .geometry import cross3, mat_t_vec, mat_vec, quat_multiply, quat_normalize, quat_to_matrix
from .models import MultiBodyModel
from .neural import NeuralBlueprint, NeuralRegistry, resolve
from .trajectory import Trajectory

__all__ = [
    "SimulationError",
    "mass_matrix",
    "bias_forces",
    "forward_dynamics",
    "integrate_step",
    "rollout_states",
    "rollout",
    "total_energy",
]


class SimulationError(RuntimeError):
    """Dynamics failure; carries the step index when raised from a rollout."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


# -- chain kinematics ---------------------------------------------------------


def _com_jacobians(model: MultiBodyModel, q):
    """Per-link COM position and its Jacobian columns d(com_i)/d(q_j).

    Planar chain hanging along -y at q = 0; absolute link angle is the
    cumulative joint angle.
    """
    n = len(model.links)
    phis = []
    acc = None
    for j in range(n):
        acc = q[j] if acc is None else acc + q[j]
        phis.append(acc)
    sins = [sin(p) for p in phis]
    coss = [cos(p) for p in phis]

    joint = [(0.0, 0.0)]
    for i in range(n - 1):
        l = model.links[i].length
        joint.append(
            (joint[i][0] + l * sins[i], joint[i][1] - l * coss[i])
        )

    coms = []
    jac = []  # jac[i][j] = (dx, dy)
    for i, link in enumerate(model.links):
        c = link.com
        coms.append((joint[i][0] + c * sins[i], joint[i][1] - c * coss[i]))
        cols = []
        for j in range(n):
            if j > i:
                cols.append((0.0, 0.0))
                continue
            dx = c * coss[i]
            dy = c * sins[i]
            for m in range(j, i):
                l = model.links[m].length
                dx = dx + l * coss[m]
                dy = dy + l * sins[m]
            cols.append((dx, dy))
        jac.append(cols)
    return coms, jac, phis


def mass_matrix(model: MultiBodyModel, q):
    """Symmetric positive-definite inertia matrix in minimal coordinates."""
    if model.is_chain:
        n = len(model.links)
        if len(q) != n:
            raise SimulationError(f"q has {len(q)} entries for a {n}-joint chain")
        _, jac, _ = _com_jacobians(model, q)
        M = [[0.0] * n for _ in range(n)]
        for j in range(n):
            for k in range(j, n):
                acc = 0.0
                for i, link in enumerate(model.links):
                    if i < j or i < k:
                        continue
                    jj = jac[i][j]
                    kk = jac[i][k]
                    acc = acc + link.mass * (jj[0] * kk[0] + jj[1] * kk[1])
                    acc = acc + link.inertia_zz
                M[j][k] = acc
                M[k][j] = acc
        _check_finite_matrix(M)
        return M
    fb = model.free_body
    M = [[0.0] * 6 for _ in range(6)]
    for i in range(3):
        M[i][i] = fb.mass
    R = quat_to_matrix(q[3:7])
    I_body = fb.inertia
    for a in range(3):
        for b in range(3):
            acc = 0.0
            for k in range(3):
                acc = acc + R[a][k] * I_body[k] * R[b][k]
            M[3 + a][3 + b] = acc
    _check_finite_matrix(M)
    return M


def _check_finite_matrix(M):
    for row in M:
        for v in row:
            if not math.isfinite(real(v)):
                raise SimulationError("non-finite inertia matrix entry")


def bias_forces(model: MultiBodyModel, q, qd, registry: NeuralRegistry | None = None):
    """Generalized bias b with M qdd + b = tau: centrifugal/Coriolis,
    gravity, and per-joint damping (the ``joint_damping_<j>`` attachment)."""
    if not model.is_chain:
        raise SimulationError("bias_forces applies to chain models")
    n = len(model.links)
    _, jac, phis = _com_jacobians(model, q)
    phidots = []
    acc = None
    for j in range(n):
        acc = qd[j] if acc is None else acc + qd[j]
        phidots.append(acc)

    # COM accelerations at zero joint acceleration (centripetal terms only).
    accels = []
    for i, link in enumerate(model.links):
        ax = 0.0
        ay = 0.0
        for m in range(i):
            l = model.links[m].length
            w2 = phidots[m] * phidots[m]
            ax = ax - l * w2 * sin(phis[m])
            ay = ay + l * w2 * cos(phis[m])
        c = link.com
        w2 = phidots[i] * phidots[i]
        ax = ax - c * w2 * sin(phis[i])
        ay = ay + c * w2 * cos(phis[i])
        accels.append((ax, ay))

    if registry is not None:
        for j in range(n):
            registry.record(f"q{j}", q[j])
            registry.record(f"qd{j}", qd[j])

    g = model.gravity
    bias = []
    for j in range(n):
        b = 0.0
        for i, link in enumerate(model.links):
            if i < j:
                continue
            jj = jac[i][j]
            b = b + link.mass * (accels[i][0] * jj[0] + accels[i][1] * jj[1])
            b = b + link.mass * g * jj[1]
        damping = model.links[j].damping * qd[j]
        b = b + resolve(f"joint_damping_{j}", damping, registry)
        if not math.isfinite(real(b)):
            raise SimulationError("non-finite bias force entry")
        bias.append(b)
    return bias


def _solve_linear(M, rhs):
    """Gaussian elimination with real-part pivoting; scalar-generic."""
    n = len(rhs)
    if n == 1:
        if real(M[0][0]) == 0.0:
            raise SimulationError("singular mass matrix")
        return [rhs[0] / M[0][0]]
    if n == 2:
        det = M[0][0] * M[1][1] - M[0][1] * M[1][0]
        if real(det) == 0.0:
            raise SimulationError("singular mass matrix")
        return [
            (rhs[0] * M[1][1] - rhs[1] * M[0][1]) / det,
            (rhs[1] * M[0][0] - rhs[0] * M[1][0]) / det,
        ]
    A = [list(row) for row in M]
    b = list(rhs)
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(real(A[r][col])))
        if real(A[piv][col]) == 0.0:
            raise SimulationError("singular mass matrix")
        if piv != col:
            A[col], A[piv] = A[piv], A[col]
            b[col], b[piv] = b[piv], b[col]
        for r in range(col + 1, n):
            f = A[r][col] / A[col][col]
            for c in range(col, n):
                A[r][c] = A[r][c] - f * A[col][c]
            b[r] = b[r] - f * b[col]
    out = [0.0] * n
    for r in range(n - 1, -1, -1):
        acc = b[r]
        for c in range(r + 1, n):
            acc = acc - A[r][c] * out[c]
        out[r] = acc / A[r][r]
    return out


def forward_dynamics(
    model: MultiBodyModel,
    q,
    qd,
    tau=None,
    external_wrenches=None,
    registry: NeuralRegistry | None = None,
):
    """Generalized accelerations.

    Chains solve M qdd = tau - b.  The free body runs Newton-Euler:
    gravity plus external (force, lever) wrenches for the linear part,
    body-frame Euler equations with the gyroscopic term for rotation.
    """
    if model.is_chain:
        n = len(model.links)
        M = mass_matrix(model, q)
        b = bias_forces(model, q, qd, registry)
        rhs = [
            (0.0 if tau is None else tau[j]) - b[j]
            for j in range(n)
        ]
        return _solve_linear(M, rhs)

    fb = model.free_body
    R = quat_to_matrix(q[3:7])
    force = [0.0, 0.0, -fb.mass * model.gravity]
    torque = [0.0, 0.0, 0.0]
    if external_wrenches:
        for f, lever in external_wrenches:
            force = [force[i] + f[i] for i in range(3)]
            tq = cross3(lever, f)
            torque = [torque[i] + tq[i] for i in range(3)]
    lin_acc = [force[i] / fb.mass for i in range(3)]

    w_body = mat_t_vec(R, qd[3:6])
    t_body = mat_t_vec(R, torque)
    Iw = [fb.inertia[i] * w_body[i] for i in range(3)]
    gyro = cross3(w_body, Iw)
    alpha_body = [(t_body[i] - gyro[i]) / fb.inertia[i] for i in range(3)]
    ang_acc = mat_vec(R, alpha_body)
    return [*lin_acc, *ang_acc]


def integrate_step(model: MultiBodyModel, q, qd, qdd, dt: float):
    """Semi-implicit Euler: velocity first, then position with the new
    velocity; free-body quaternions renormalized."""
    if dt <= 0:
        raise SimulationError("dt must be positive")
    if model.is_chain:
        new_qd = [qd[j] + qdd[j] * dt for j in range(len(qd))]
        new_q = [q[j] + new_qd[j] * dt for j in range(len(q))]
        return new_q, new_qd
    new_qd = [qd[i] + qdd[i] * dt for i in range(6)]
    pos = [q[i] + new_qd[i] * dt for i in range(3)]
    quat = q[3:7]
    dq = quat_multiply([0.0, new_qd[3], new_qd[4], new_qd[5]], quat)
    quat = quat_normalize([quat[i] + 0.5 * dt * dq[i] for i in range(4)])
    return [*pos, *quat], new_qd


def _step_once(model, q, qd, registry):
    if model.is_chain:
        return forward_dynamics(model, q, qd, registry=registry)
    wrenches = None
    if model.contact is not None:
        contacts = detect_contacts(
            q[:3], q[3:7], qd[:3], qd[3:6], model.free_body.half_extents
        )
        if contacts:
            wrenches = compliant_contact_wrenches(model.contact, registry, contacts)
    return forward_dynamics(model, q, qd, external_wrenches=wrenches, registry=registry)


def rollout_states(
    model: MultiBodyModel,
    blueprint: NeuralBlueprint | None,
    q0,
    qd0,
    steps: int,
    dt: float,
):
    """Repeated one-step dynamics; returns steps+1 (q, qd) scalar lists.

    This is the discrete transition map applied to arbitrary scalar types;
    the neural registry is cleared at every step so attachments only see
    values recorded within the step.
    """
    if steps < 1:
        raise SimulationError("steps must be >= 1")
    if dt <= 0:
        raise SimulationError("dt must be positive")
    registry = NeuralRegistry(blueprint) if blueprint is not None else None
    q = list(q0)
    qd = list(qd0)
    out = [(list(q), list(qd))]
    for k in range(steps):
        if registry is not None:
            registry.begin_step()
        try:
            qdd = _step_once(model, q, qd, registry)
            q, qd = integrate_step(model, q, qd, qdd, dt)
        except SimulationError as err:
            raise SimulationError(str(err), step=k) from None
        except (ZeroDivisionError, ArithmeticError, ValueError) as err:
            raise SimulationError(str(err), step=k) from None
        for v in qd:
            if not math.isfinite(real(v)):
                raise SimulationError("non-finite velocity", step=k)
        out.append((list(q), list(qd)))
    return out


def rollout(
    model: MultiBodyModel,
    blueprint: NeuralBlueprint | None,
    q0,
    qd0,
    steps: int,
    dt: float,
    t0: float = 0.0,
) -> Trajectory:
    """Float-path rollout packaged as a Trajectory."""
    states = rollout_states(
        model,
        blueprint,
        [float(v) for v in q0],
        [float(v) for v in qd0],
        steps,
        dt,
    )
    qs = np.array([[real(v) for v in q] for q, _ in states])
    qds = np.array([[real(v) for v in qd] for _, qd in states])
    t = t0 + np.arange(steps + 1) * dt
    metadata = {"model": "chain" if model.is_chain else "free_body"}
    if model.is_chain:
        metadata["angles"] = ",".join(f"q{j}" for j in range(len(model.links)))
    return Trajectory(dt=dt, t=t, q=qs, qd=qds, metadata=metadata)


def total_energy(model: MultiBodyModel, q, qd):
    """Kinetic plus gravitational potential energy (diagnostic)."""
    if model.is_chain:
        M = mass_matrix(model, q)
        n = len(model.links)
        kin = 0.0
        for j in range(n):
            for k in range(n):
                kin = kin + 0.5 * qd[j] * M[j][k] * qd[k]
        coms, _, _ = _com_jacobians(model, q)
        pot = 0.0
        for link, com in zip(model.links, coms):
            pot = pot + link.mass * model.gravity * com[1]
        return kin + pot
    fb = model.free_body
    v = qd[:3]
    kin = 0.5 * fb.mass * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    R = quat_to_matrix(q[3:7])
    w_body = mat_t_vec(R, qd[3:6])
    for i in range(3):
        kin = kin + 0.5 * fb.inertia[i] * w_body[i] * w_body[i]
    return kin + fb.mass * model.gravity * q[2]
