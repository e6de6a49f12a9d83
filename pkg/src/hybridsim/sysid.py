"""Trajectory-fitting objective and solvers.

The loss is a sum of squared one-step prediction errors accumulated over
short rollout windows, each window re-anchored at an observed state (the
window length generalizes pure one-step prediction, which is W=1), plus a
Tikhonov penalty on the packed network weights.  Everything is expressed
through one residual vector whose squared norm equals the loss exactly, so
a Levenberg-Marquardt solver with dual-number Jacobians applies directly.
Poor local minima are escaped by parallel basin hopping: many LMA restarts
with randomized starts, sharing one incumbent best.
"""

from __future__ import annotations

import concurrent.futures
import math
import pickle
from dataclasses import dataclass, field

import numpy as np

from .dual import Dual, real, seed_vector
from .dynamics import SimulationError, rollout_states
from .models import MultiBodyModel
from .neural import NeuralBlueprint
from .trajectory import Trajectory

__all__ = [
    "ParameterVector",
    "ObjectiveConfig",
    "IdentificationProblem",
    "SolveReport",
    "RestartRecord",
    "SolverError",
    "lma_solve",
    "pbh_search",
]

LAMBDA_MAX = 1e12
UNBOUNDED_DRAW_HALFWIDTH = 0.5


class SolverError(RuntimeError):
    pass


@dataclass
class ParameterVector:
    """Joint parameter layout: analytical entries (bounded) first, then
    packed network weights (unbounded by default)."""

    values: np.ndarray
    names: list[str]
    lower: np.ndarray
    upper: np.ndarray
    n_analytic: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.values.shape[0]
        if not (len(self.names) == n and self.lower.shape[0] == n
                and self.upper.shape[0] == n):
            raise ValueError("parameter layout lengths disagree")
        if np.any(self.values < self.lower) or np.any(self.values > self.upper):
            raise ValueError("analytical parameter outside its bounds")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def analytic(self, theta) -> list:
        return list(theta[: self.n_analytic])

    def network(self, theta) -> list:
        return list(theta[self.n_analytic:])


@dataclass
class ObjectiveConfig:
    """Loss shape: weight penalty factor, window length in observed steps,
    per-dimension state-error weights (positions 1, velocities 0.1 when
    omitted), and integrator substeps per observed interval."""

    regularization: float = 0.0
    window_length: int = 10
    state_weights: np.ndarray | None = None
    substeps: int = 1

    def __post_init__(self):
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")
        if self.window_length < 1:
            raise ValueError("window_length must be >= 1")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.state_weights is not None:
            w = np.asarray(self.state_weights, dtype=float)
            if np.any(w < 0) or not np.any(w > 0):
                raise ValueError("state weights must be >= 0 and not all zero")
            self.state_weights = w


def default_state_weights(nq: int, nv: int, velocity_weight: float = 0.1) -> np.ndarray:
    return np.concatenate([np.ones(nq), np.full(nv, velocity_weight)])


@dataclass
class IdentificationProblem:
    """Bundles model, blueprint, target data and config into one residual
    function; callable with floats or duals."""

    model: MultiBodyModel
    blueprint: NeuralBlueprint | None
    target: Trajectory
    config: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if self.target.n < 2:
            raise ValueError("target trajectory needs at least 2 states")
        nq, nv = self.target.nq, self.target.nv
        expect_nq = self.model.nq
        expect_nv = self.model.dof
        if nq != expect_nq or nv != expect_nv:
            raise ValueError(
                f"target dimensions ({nq}, {nv}) do not match model "
                f"({expect_nq}, {expect_nv})"
            )
        if self.config.state_weights is None:
            self.config.state_weights = default_state_weights(nq, nv)
        elif self.config.state_weights.shape[0] != nq + nv:
            raise ValueError("state_weights length must equal state dimension")
        self._sqrt_w = np.sqrt(self.config.state_weights)
        self._sqrt_reg = math.sqrt(self.config.regularization)

    # -- parameter layout ----------------------------------------------------

    def parameter_vector(self) -> ParameterVector:
        names = [fp.name for fp in self.model.free_params]
        values = self.model.free_values()
        lower = [fp.lower for fp in self.model.free_params]
        upper = [fp.upper for fp in self.model.free_params]
        n_am = len(names)
        if self.blueprint is not None:
            for att, spec in self.blueprint.attachments.items():
                sl = self.blueprint.weight_slice(att)
                for i in range(sl.stop - sl.start):
                    names.append(f"nn.{att}[{i}]")
                    lower.append(-np.inf)
                    upper.append(np.inf)
            values = values + [real(w) for w in self.blueprint.weights]
        return ParameterVector(
            values=np.array(values, dtype=float),
            names=names,
            lower=np.array(lower, dtype=float),
            upper=np.array(upper, dtype=float),
            n_analytic=n_am,
        )

    def windows(self) -> list[tuple[int, int]]:
        """(anchor index, step count) pairs covering the target."""
        W = self.config.window_length
        out = []
        a = 0
        last = self.target.n - 1
        while a < last:
            out.append((a, min(W, last - a)))
            a += W
        return out

    # -- residuals -------------------------------------------------------------

    def __call__(self, theta):
        return self.residuals(theta)

    def residuals(self, theta):
        """Stacked weighted state errors over all windows, then the
        sqrt(R)-scaled network weights; sum of squares equals the loss."""
        n_am = len(self.model.free_params)
        model = self.model.with_values(list(theta[:n_am]))
        bp = None
        nn = []
        if self.blueprint is not None:
            nn = list(theta[n_am:])
            bp = self.blueprint.with_weights(nn)
        sub = self.config.substeps
        sim_dt = self.target.dt / sub
        res = []
        for a, steps in self.windows():
            try:
                states = rollout_states(
                    model,
                    bp,
                    list(self.target.q[a]),
                    list(self.target.qd[a]),
                    steps * sub,
                    sim_dt,
                )
            except SimulationError as err:
                raise SimulationError(
                    f"window anchored at index {a}: {err}"
                ) from None
            for s in range(1, steps + 1):
                q_sim, qd_sim = states[s * sub]
                self._state_error(res, q_sim, qd_sim, a + s)
        if self._sqrt_reg > 0.0:
            res.extend(self._sqrt_reg * w for w in nn)
        elif nn:
            res.extend(0.0 * w for w in nn)
        return res

    def _state_error(self, out: list, q_sim, qd_sim, target_idx: int):
        tq = self.target.q[target_idx]
        tqd = self.target.qd[target_idx]
        w = self._sqrt_w
        if self.model.is_chain:
            for j in range(len(q_sim)):
                out.append(w[j] * (q_sim[j] - tq[j]))
            off = len(q_sim)
            for j in range(len(qd_sim)):
                out.append(w[off + j] * (qd_sim[j] - tqd[j]))
            return
        for j in range(3):
            out.append(w[j] * (q_sim[j] - tq[j]))
        quat = q_sim[3:7]
        dot = quat[0] * tq[3] + quat[1] * tq[4] + quat[2] * tq[5] + quat[3] * tq[6]
        if dot < 0.0:
            quat = [-c for c in quat]
        for j in range(4):
            out.append(w[3 + j] * (quat[j] - tq[3 + j]))
        for j in range(6):
            out.append(w[7 + j] * (qd_sim[j] - tqd[j]))

    def residual_count(self) -> int:
        d = self.target.nq + self.target.nv
        n_nn = self.blueprint.n_weights if self.blueprint is not None else 0
        return sum(steps for _, steps in self.windows()) * d + n_nn

    def loss(self, theta):
        """Windowed squared error plus R * ||network weights||^2."""
        acc = 0.0
        for r in self.residuals(theta):
            acc = acc + r * r
        return acc


# -- Levenberg-Marquardt -------------------------------------------------------


@dataclass
class RestartRecord:
    index: int
    worker: int
    start: list
    loss: float
    iterations: int
    termination: str
    loss_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "worker": self.worker,
            "start": [float(v) for v in self.start],
            "loss": float(self.loss),
            "iterations": self.iterations,
            "termination": self.termination,
            "loss_history": [float(v) for v in self.loss_history],
        }


@dataclass
class SolveReport:
    best_theta: np.ndarray
    best_loss: float
    iterations: int
    restarts: list[RestartRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "best_theta": [float(v) for v in self.best_theta],
            "best_loss": float(self.best_loss),
            "iterations": self.iterations,
            "restarts": [r.to_dict() for r in self.restarts],
        }


def eval_residuals(residual_fn, theta: np.ndarray) -> np.ndarray:
    return np.array([real(v) for v in residual_fn([float(v) for v in theta])])


def eval_residuals_and_jacobian(residual_fn, theta: np.ndarray):
    """One dual-number forward pass: residual vector plus full Jacobian.

    Overflow in the partials (hopeless parameter region) surfaces as
    non-finite Jacobian entries for the caller to handle, not as warnings.
    """
    xs = seed_vector([float(v) for v in theta])
    with np.errstate(over="ignore", invalid="ignore"):
        rs = residual_fn(xs)
    m, n = len(rs), len(theta)
    r = np.empty(m)
    J = np.zeros((m, n))
    for i, v in enumerate(rs):
        if isinstance(v, Dual):
            r[i] = v.re
            J[i] = v.d
        else:
            r[i] = v
    return r, J


def lma_solve(
    residual_fn,
    theta0,
    bounds=None,
    max_iters: int = 100,
    lambda0: float = 1e-3,
    lambda_up: float = 10.0,
    lambda_down: float = 10.0,
    tol_grad: float = 1e-10,
    tol_step: float = 1e-12,
) -> SolveReport:
    """Damped Gauss-Newton on a scalar-generic residual function.

    Solves (J^T J + lam * diag(J^T J)) step = -J^T r, accepting steps that
    reduce the loss (after projection onto the bounds) and scaling the
    damping up or down accordingly.  The accepted-loss sequence is
    monotonically non-increasing.  Raises :class:`SolverError` if the
    damping exceeds ``1e12`` without making progress.
    """
    theta = np.array([float(v) for v in theta0])
    lo, hi = _expand_bounds(bounds, theta.shape[0])
    theta = np.clip(theta, lo, hi)

    try:
        r, J = eval_residuals_and_jacobian(residual_fn, theta)
    except SimulationError as err:
        raise SolverError(f"initial point does not simulate: {err}") from None
    if not np.all(np.isfinite(r)):
        raise SolverError("non-finite residuals at the initial point")
    if not np.all(np.isfinite(J)):
        raise SolverError("non-finite Jacobian at the initial point")
    loss = float(r @ r)
    lam = lambda0
    termination = "max_iters"
    iterations = 0
    history = [loss]

    for _ in range(max_iters):
        g = J.T @ r
        if np.max(np.abs(g)) <= tol_grad:
            termination = "gradient_tol"
            break
        H = J.T @ J
        diag = np.diag(H).copy()
        floor = 1e-14 * max(float(diag.max()), 1e-300)
        diag = np.maximum(diag, floor)

        accepted = False
        singular = False
        step_size = 0.0
        while lam <= LAMBDA_MAX:
            singular = False
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                singular = True
                step = None
            if step is not None and np.all(np.isfinite(step)):
                candidate = np.clip(theta + step, lo, hi)
                try:
                    r_new = eval_residuals(residual_fn, candidate)
                    loss_new = float(r_new @ r_new)
                except SimulationError:
                    loss_new = math.inf
                    r_new = None
                if r_new is not None and np.all(np.isfinite(r_new)) and loss_new < loss:
                    step_size = float(np.linalg.norm(candidate - theta))
                    theta = candidate
                    loss = loss_new
                    lam = max(lam / lambda_down, 1e-12)
                    accepted = True
                    break
            lam *= lambda_up
        if not accepted:
            if singular:
                raise SolverError(
                    f"singular damped normal equations past lambda={LAMBDA_MAX:g}"
                )
            termination = "lambda_max"
            break
        iterations += 1
        history.append(loss)
        r, J = eval_residuals_and_jacobian(residual_fn, theta)
        loss = float(r @ r)
        if not np.all(np.isfinite(J)):
            termination = "nonfinite_jacobian"
            break
        if step_size <= tol_step * (1.0 + float(np.linalg.norm(theta))):
            termination = "step_tol"
            break

    record = RestartRecord(
        index=0, worker=0, start=[float(v) for v in theta0],
        loss=loss, iterations=iterations, termination=termination,
        loss_history=history,
    )
    r_final = eval_residuals(residual_fn, theta)
    return SolveReport(
        best_theta=theta, best_loss=float(r_final @ r_final),
        iterations=iterations, restarts=[record],
    )


def _expand_bounds(bounds, n: int):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    if lo.shape[0] != n or hi.shape[0] != n:
        raise ValueError("bounds length does not match parameter count")
    return lo, hi


# -- parallel basin hopping ----------------------------------------------------


def _run_restart(payload):
    residual_fn, start, bounds, lma_options = payload
    try:
        report = lma_solve(residual_fn, start, bounds=bounds, **lma_options)
        rec = report.restarts[0]
        return (report.best_theta, rec.loss, rec.iterations, rec.termination,
                rec.loss_history)
    except Exception as err:  # noqa: BLE001 - restart failures are data
        return (None, math.inf, 0, f"failed: {err}", [])


def pbh_search(
    residual_fn,
    bounds,
    workers: int = 4,
    budget_restarts: int = 8,
    master_seed: int = 0,
    perturb_scale: float = 0.25,
    parallel: str = "auto",
    lma_options: dict | None = None,
    initial=None,
) -> SolveReport:
    """Randomized-restart global search around the LMA local solver.

    Restarts are distributed over ``workers`` deterministic random streams
    and executed in synchronized rounds: every worker draws a start (fresh
    uniform draw with probability 1/2, otherwise a Gaussian perturbation of
    the shared incumbent), runs LMA to convergence, and the incumbent is
    updated in worker order at the round barrier.  Results therefore depend
    only on (master_seed, workers, budget_restarts), not on scheduling.
    Individual restart failures are recorded, not fatal.

    ``initial``, when given, is used verbatim as the start of restart 0, so
    a (workers=1, budget_restarts=1) search reduces to plain LMA from it.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if budget_restarts < 1:
        raise ValueError("budget_restarts must be >= 1")
    lma_options = dict(lma_options or {})
    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    n = lo.shape[0]
    draw_lo = np.where(np.isfinite(lo), lo, -UNBOUNDED_DRAW_HALFWIDTH)
    draw_hi = np.where(np.isfinite(hi), hi, UNBOUNDED_DRAW_HALFWIDTH)
    scales = perturb_scale * np.where(
        np.isfinite(hi - lo), hi - lo, 2.0 * UNBOUNDED_DRAW_HALFWIDTH
    )

    streams = [np.random.default_rng([master_seed, w]) for w in range(workers)]
    use_processes = _pick_backend(parallel, residual_fn)

    incumbent = None
    incumbent_loss = math.inf
    records: list[RestartRecord] = []
    total_iters = 0

    executor = None
    if use_processes:
        executor = concurrent.futures.ProcessPoolExecutor(max_workers=workers)
    try:
        done = 0
        while done < budget_restarts:
            batch = []
            for w in range(workers):
                idx = done + len(batch)
                if idx >= budget_restarts:
                    break
                if idx == 0 and initial is not None:
                    start = np.array([float(v) for v in initial])
                else:
                    rng = streams[w]
                    u = rng.uniform()
                    if incumbent is None or u < 0.5:
                        start = rng.uniform(draw_lo, draw_hi)
                    else:
                        start = incumbent + rng.standard_normal(n) * scales
                        start = np.clip(start, draw_lo, draw_hi)
                start = np.clip(start, lo, hi)
                batch.append((idx, w, start))

            payloads = [
                (residual_fn, start, (lo, hi), lma_options)
                for _, _, start in batch
            ]
            if executor is not None:
                results = list(executor.map(_run_restart, payloads))
            else:
                results = [_run_restart(p) for p in payloads]

            for (idx, w, start), (theta, loss, iters, term, hist) in zip(batch, results):
                records.append(
                    RestartRecord(
                        index=idx, worker=w, start=[float(v) for v in start],
                        loss=loss, iterations=iters, termination=term,
                        loss_history=hist,
                    )
                )
                total_iters += iters
                if theta is not None and loss < incumbent_loss:
                    incumbent = np.array(theta)
                    incumbent_loss = loss
            done += len(batch)
    finally:
        if executor is not None:
            executor.shutdown()

    if incumbent is None:
        raise SolverError("every restart failed")
    r = eval_residuals(residual_fn, incumbent)
    return SolveReport(
        best_theta=incumbent, best_loss=float(r @ r),
        iterations=total_iters, restarts=records,
    )


def _pick_backend(parallel: str, residual_fn) -> bool:
    if parallel == "serial":
        return False
    if parallel == "process":
        return True
    if parallel == "auto":
        try:
            pickle.dumps(residual_fn)
            return True
        except Exception:
            return False
    raise ValueError(f"unknown parallel mode {parallel!r}")
