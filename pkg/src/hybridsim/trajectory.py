"""Trajectory containers, CSV serialization, marker-data import, resampling.

Trajectory files are plain CSV with a ``t,q0,...,qd0,...`` header and
optional ``# key=value`` metadata comment lines above it.  Marker files for
the physical double pendulum hold pixel coordinates of the pivot, elbow and
tip markers per frame (``t,x0,y0,x1,y1,x2,y2``); import converts them to
joint angles (zero = hanging down, image y axis pointing down) and
finite-difference velocities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Trajectory",
    "TrajectoryState",
    "RawMarkerFrame",
    "TrajectoryError",
    "write_trajectory",
    "read_trajectory",
    "read_marker_csv",
    "import_double_pendulum",
    "resample",
]

_DT_RTOL = 1e-6


class TrajectoryError(ValueError):
    pass


@dataclass(frozen=True)
class RawMarkerFrame:
    """Pixel coordinates of the three tracked points at one timestamp."""

    t: float
    pivot: tuple[float, float]
    elbow: tuple[float, float]
    tip: tuple[float, float]


@dataclass(frozen=True)
class TrajectoryState:
    t: float
    q: np.ndarray
    qd: np.ndarray


@dataclass
class Trajectory:
    """Uniformly sampled states; ``q`` is (N, nq), ``qd`` is (N, nv)."""

    dt: float
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.q = np.atleast_2d(np.asarray(self.q, dtype=float))
        self.qd = np.atleast_2d(np.asarray(self.qd, dtype=float))
        n = self.t.shape[0]
        if n < 1:
            raise TrajectoryError("trajectory needs at least one state")
        if self.q.shape[0] != n or self.qd.shape[0] != n:
            raise TrajectoryError("t, q, qd must have matching lengths")
        if n > 1:
            diffs = np.diff(self.t)
            if np.any(diffs <= 0):
                raise TrajectoryError("timestamps must be strictly increasing")
            if np.any(np.abs(diffs - self.dt) > _DT_RTOL * max(abs(self.dt), 1e-12)):
                raise TrajectoryError("timestamps are not uniform at dt")

    @property
    def n(self) -> int:
        return self.t.shape[0]

    @property
    def nq(self) -> int:
        return self.q.shape[1]

    @property
    def nv(self) -> int:
        return self.qd.shape[1]

    def state(self, i: int) -> TrajectoryState:
        return TrajectoryState(float(self.t[i]), self.q[i].copy(), self.qd[i].copy())

    def states(self):
        return [self.state(i) for i in range(self.n)]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trajectory(traj: Trajectory, destination) -> None:
    """Write CSV with metadata comments; values survive a round trip exactly."""
    header = (
        ["t"]
        + [f"q{i}" for i in range(traj.nq)]
        + [f"qd{i}" for i in range(traj.nv)]
    )
    lines = [f"# {k}={v}" for k, v in sorted(traj.metadata.items())]
    lines.append(",".join(header))
    for i in range(traj.n):
        row = [_fmt(traj.t[i])]
        row += [_fmt(v) for v in traj.q[i]]
        row += [_fmt(v) for v in traj.qd[i]]
        lines.append(",".join(row))
    Path(destination).write_text("\n".join(lines) + "\n")


def read_trajectory(source) -> Trajectory:
    """Parse a trajectory CSV, enforcing the uniform-timestamp invariant."""
    text = Path(source).read_text()
    metadata: dict = {}
    header: list[str] | None = None
    rows: list[list[float]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body and header is None:
                k, _, v = body.partition("=")
                metadata[k.strip()] = v.strip()
            continue
        if header is None:
            header = [c.strip() for c in line.split(",")]
            if header[0] != "t" or len(header) < 3:
                raise TrajectoryError(f"line {lineno}: malformed header {line!r}")
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise TrajectoryError(
                f"line {lineno}: expected {len(header)} columns, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise TrajectoryError(f"line {lineno}: non-numeric value in {line!r}")
    if header is None or not rows:
        raise TrajectoryError("no data rows found")
    nq = sum(1 for h in header if h.startswith("q") and not h.startswith("qd"))
    nv = sum(1 for h in header if h.startswith("qd"))
    if 1 + nq + nv != len(header):
        raise TrajectoryError(f"unrecognized columns in header {header!r}")
    data = np.array(rows)
    t = data[:, 0]
    dt = float(t[1] - t[0]) if len(rows) > 1 else 1.0
    return Trajectory(
        dt=dt, t=t, q=data[:, 1:1 + nq], qd=data[:, 1 + nq:], metadata=metadata
    )


def read_marker_csv(source) -> np.ndarray:
    """Read ``t,x0,y0,x1,y1,x2,y2`` marker rows into an (N, 7) array."""
    text = Path(source).read_text()
    rows = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("t"):
            continue
        cells = line.split(",")
        if len(cells) != 7:
            raise TrajectoryError(
                f"line {lineno}: marker rows need 7 columns, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise TrajectoryError(f"line {lineno}: non-numeric value in {line!r}")
    if len(rows) < 3:
        raise TrajectoryError("marker import needs at least 3 frames")
    return np.array(rows)


def _unwrap_series(a: np.ndarray) -> np.ndarray:
    return np.unwrap(a)


def import_double_pendulum(
    frames, pixel_to_meter: float, smooth: bool = False
) -> Trajectory:
    """Convert tracked marker pixels to a joint-space trajectory.

    Joint 1 is the absolute elbow-from-pivot angle, joint 2 the tip angle
    relative to link 1, both zero hanging straight down.  Velocities come
    from central differences (one-sided at the ends); ``smooth`` applies a
    width-5 moving average to the velocity estimates for jittery data.
    """
    if isinstance(frames, (list, tuple)) and frames and isinstance(frames[0], RawMarkerFrame):
        frames = np.array(
            [[f.t, *f.pivot, *f.elbow, *f.tip] for f in frames]
        )
    data = np.asarray(frames, dtype=float)
    if data.ndim != 2 or data.shape[1] != 7:
        raise TrajectoryError("marker frames must be (N, 7): t,x0,y0,x1,y1,x2,y2")
    if data.shape[0] < 3:
        raise TrajectoryError("marker import needs at least 3 frames")
    if not np.all(np.isfinite(data)):
        raise TrajectoryError("marker data contains non-finite values")

    t = data[:, 0]
    diffs = np.diff(t)
    if np.any(diffs <= 0):
        raise TrajectoryError("marker timestamps must be strictly increasing")
    dt = float(np.median(diffs))
    if np.any(np.abs(diffs - dt) > 0.01 * dt):
        raise TrajectoryError("marker frame rate jitter exceeds 1%")

    pivot = data[:, 1:3]
    elbow = data[:, 3:5]
    tip = data[:, 5:7]
    seg1 = elbow - pivot
    seg2 = tip - elbow
    len1 = np.hypot(seg1[:, 0], seg1[:, 1])
    len2 = np.hypot(seg2[:, 0], seg2[:, 1])
    if np.any(len1 < 1e-9) or np.any(len2 < 1e-9):
        raise TrajectoryError("coincident markers in at least one frame")

    # Image y grows downward, so atan2(dx, dy) is zero hanging down and
    # increases counterclockwise in the physical plane.
    abs1 = _unwrap_series(np.arctan2(seg1[:, 0], seg1[:, 1]))
    abs2 = _unwrap_series(np.arctan2(seg2[:, 0], seg2[:, 1]))
    q = np.column_stack([abs1, abs2 - abs1])

    qd = np.empty_like(q)
    qd[1:-1] = (q[2:] - q[:-2]) / (2.0 * dt)
    qd[0] = (q[1] - q[0]) / dt
    qd[-1] = (q[-1] - q[-2]) / dt
    if smooth:
        kernel = np.ones(5) / 5.0
        for j in range(qd.shape[1]):
            qd[:, j] = np.convolve(
                np.pad(qd[:, j], 2, mode="edge"), kernel, mode="valid"
            )

    metadata = {
        "source": "markers",
        "angles": "q0,q1",
        "l1_measured": _fmt(float(np.mean(len1)) * pixel_to_meter),
        "l2_measured": _fmt(float(np.mean(len2)) * pixel_to_meter),
    }
    return Trajectory(dt=dt, t=t, q=q, qd=qd, metadata=metadata)


def resample(traj: Trajectory, new_dt: float) -> Trajectory:
    """Linear interpolation onto a new uniform grid starting at t[0].

    Dimensions listed in ``metadata["angles"]`` are interpolated along the
    shortest arc; the grid must stay inside the original time range.
    """
    if new_dt <= 0:
        raise TrajectoryError("new_dt must be positive")
    t0, t_end = float(traj.t[0]), float(traj.t[-1])
    n_new = int(math.floor((t_end - t0) / new_dt + 1e-9)) + 1
    new_t = t0 + np.arange(n_new) * new_dt
    if n_new < 1 or new_t[-1] > t_end + 1e-9 * max(1.0, abs(t_end)):
        raise TrajectoryError("resample grid extends beyond the data range")

    angle_names = set(
        s for s in traj.metadata.get("angles", "").split(",") if s
    )
    angle_dims = {
        j for j in range(traj.nq) if f"q{j}" in angle_names
    }

    idx = np.searchsorted(traj.t, new_t, side="right") - 1
    idx = np.clip(idx, 0, traj.n - 2 if traj.n > 1 else 0)
    if traj.n == 1:
        frac = np.zeros(n_new)
    else:
        span = traj.t[idx + 1] - traj.t[idx]
        frac = (new_t - traj.t[idx]) / span

    def interp_cols(arr: np.ndarray, circular: set[int]) -> np.ndarray:
        out = np.empty((n_new, arr.shape[1]))
        for j in range(arr.shape[1]):
            if traj.n == 1:
                out[:, j] = arr[0, j]
                continue
            a = arr[idx, j]
            b = arr[idx + 1, j]
            d = b - a
            if j in circular:
                d = (d + math.pi) % (2.0 * math.pi) - math.pi
            col = a + frac * d
            # exact grid hits keep the stored sample bit-for-bit
            col = np.where(frac == 0.0, a, col)
            col = np.where(frac == 1.0, b, col)
            out[:, j] = col
        return out

    new_q = interp_cols(traj.q, angle_dims)
    new_qd = interp_cols(traj.qd, set())
    return Trajectory(
        dt=new_dt, t=new_t, q=new_q, qd=new_qd, metadata=dict(traj.metadata)
    )
