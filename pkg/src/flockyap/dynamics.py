"""Integration of the first- and second-order alignment dynamics.

First order:  x' = -L(t, x) x
Second order: x' = v,  v' = -L(t, x) v

The right-hand side is discontinuous in t only at schedule breakpoints, so
the fixed-step RK4 integrator places a step boundary on every breakpoint and
holds the weight matrix of the current cell during each step.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import ConstantKernel, Kernel
from .laplacian import pair_distances
from .schedules import WeightSchedule
from .state import EnsembleState, VarianceStats, as_agents

CSV_HEADER = "# flockyap-trajectory v1"
STATE_HEADER = "# flockyap-states v1"
DEFAULT_STEPS_PER_CELL = 20
DEFAULT_STEP_NO_MESH = 1e-2


class SimulationError(RuntimeError):
    """Raised when the integrator produces non-finite values."""


def _effective(w: np.ndarray, x: np.ndarray, kernel: Kernel) -> np.ndarray:
    if isinstance(kernel, ConstantKernel):
        return w * kernel.value
    eff = w * np.asarray(kernel(pair_distances(x)))
    np.fill_diagonal(eff, 0.0)
    return eff


def _lap_apply(w: np.ndarray, x: np.ndarray, y: np.ndarray, kernel: Kernel) -> np.ndarray:
    """L(w, x) y with the 1/N normalization."""
    eff = _effective(w, x, kernel)
    return (eff.sum(axis=1)[:, None] * y - eff @ y) / x.shape[0]


def rhs_first_order(t: float, state: EnsembleState, schedule: WeightSchedule, kernel: Kernel) -> np.ndarray:
    w = schedule.sample(t).entries
    x = state.positions
    return -_lap_apply(w, x, x, kernel)


def rhs_second_order(t: float, state: EnsembleState, schedule: WeightSchedule, kernel: Kernel):
    if state.velocities is None:
        raise ValueError("second-order right-hand side needs velocities")
    w = schedule.sample(t).entries
    return state.velocities.copy(), -_lap_apply(w, state.positions, state.velocities, kernel)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded solution: one row per accepted step, starting at t = 0."""

    order: str
    times: np.ndarray
    positions: np.ndarray
    velocities: Optional[np.ndarray]
    schedule: WeightSchedule
    kernel: Kernel
    step: float

    def __post_init__(self):
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")
        if (self.order == "second") != (self.velocities is not None):
            raise ValueError("velocities must be present exactly for second-order trajectories")
        if self.times.ndim != 1 or self.times.size < 1 or self.times[0] != 0.0:
            raise ValueError("times must be a non-empty 1-D array starting at 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[1]

    @property
    def dim(self) -> int:
        return self.positions.shape[2]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return self.times.size

    def state(self, k: int) -> EnsembleState:
        v = None if self.velocities is None else self.velocities[k]
        return EnsembleState(self.positions[k], v, float(self.times[k]))

    @cached_property
    def X(self) -> np.ndarray:
        return _std_series(self.positions)

    @cached_property
    def V(self) -> Optional[np.ndarray]:
        return None if self.velocities is None else _std_series(self.velocities)

    def stats(self, k: int) -> VarianceStats:
        return VarianceStats(float(self.X[k]), None if self.V is None else float(self.V[k]))

    def index_of(self, t: float) -> int:
        """Index of the recorded time closest to t."""
        k = int(np.searchsorted(self.times, t))
        if k == 0:
            return 0
        if k >= self.times.size:
            return self.times.size - 1
        return k if self.times[k] - t < t - self.times[k - 1] else k - 1

    @cached_property
    def monitors(self) -> dict:
        return compute_monitors(self)


def _std_series(arr: np.ndarray) -> np.ndarray:
    dev = arr - arr.mean(axis=1, keepdims=True)
    return np.sqrt(np.einsum("knd,knd->k", dev, dev) / arr.shape[1])


def step_grid(schedule: WeightSchedule, t_end: float, step: float) -> np.ndarray:
    """Step boundaries on [0, t_end] containing every schedule breakpoint."""
    knots = [0.0, *schedule.breakpoints(0.0, t_end), float(t_end)]
    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, int(math.ceil((b - a) / step - 1e-9)))
        pieces.append(np.linspace(a, b, n + 1)[:-1])
    pieces.append(np.array([float(t_end)]))
    return np.concatenate(pieces)


def default_step(schedule: WeightSchedule) -> float:
    if math.isfinite(schedule.mesh):
        return schedule.mesh / DEFAULT_STEPS_PER_CELL
    return DEFAULT_STEP_NO_MESH


def integrate(
    order: str,
    x0,
    v0,
    schedule: WeightSchedule,
    kernel: Kernel,
    t_end: float,
    step: Optional[float] = None,
) -> Trajectory:
    """Classical RK4 with breakpoint-aligned steps; every step is recorded."""
    if order not in ("first", "second"):
        raise ValueError(f"order must be 'first' or 'second', got {order!r}")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    step = default_step(schedule) if step is None else float(step)
    if not step > 0:
        raise ValueError("step must be positive")
    x = as_agents(x0, "x0").copy()
    if x.shape[0] != schedule.n_agents:
        raise ValueError(f"schedule has {schedule.n_agents} agents, initial state has {x.shape[0]}")
    v = None
    if order == "second":
        if v0 is None:
            raise ValueError("second-order integration needs initial velocities")
        v = as_agents(v0, "v0").copy()
        if v.shape != x.shape:
            raise ValueError("v0 and x0 shapes differ")
    EnsembleState(x, v)  # validates finiteness

    times = step_grid(schedule, t_end, step)
    xs = np.empty((times.size,) + x.shape)
    vs = None if v is None else np.empty_like(xs)
    xs[0] = x
    if vs is not None:
        vs[0] = v

    for k in range(times.size - 1):
        t, h = times[k], times[k + 1] - times[k]
        w = schedule.sample(t).entries
        if order == "first":
            k1 = -_lap_apply(w, x, x, kernel)
            x2 = x + 0.5 * h * k1
            k2 = -_lap_apply(w, x2, x2, kernel)
            x3 = x + 0.5 * h * k2
            k3 = -_lap_apply(w, x3, x3, kernel)
            x4 = x + h * k3
            k4 = -_lap_apply(w, x4, x4, kernel)
            x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            a1 = -_lap_apply(w, x, v, kernel)
            xb, vb = x + 0.5 * h * v, v + 0.5 * h * a1
            a2 = -_lap_apply(w, xb, vb, kernel)
            xc, vc = x + 0.5 * h * vb, v + 0.5 * h * a2
            a3 = -_lap_apply(w, xc, vc, kernel)
            xd, vd = x + h * vc, v + h * a3
            a4 = -_lap_apply(w, xd, vd, kernel)
            x = x + (h / 6.0) * (v + 2 * vb + 2 * vc + vd)
            v = v + (h / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
        if not np.all(np.isfinite(x)) or (v is not None and not np.all(np.isfinite(v))):
            raise SimulationError(
                f"non-finite state after step {k + 1} at t = {times[k + 1]:.6g} (h = {h:.3g})"
            )
        xs[k + 1] = x
        if vs is not None:
            vs[k + 1] = v

    return Trajectory(order, times, xs, vs, schedule, kernel, step)


def compute_monitors(traj: Trajectory) -> dict:
    """Per-step conservation and weak-dissipation residuals (positive = violation)."""
    t = traj.times
    X = traj.X
    xbar = traj.positions.mean(axis=1)
    out = {"t": t}
    dt = np.diff(t)
    if traj.order == "first":
        out["mean_drift"] = np.linalg.norm(xbar - xbar[0], axis=1)
        out["x_monotone_residual"] = np.concatenate([[0.0], np.diff(X)])
    else:
        vbar = traj.velocities.mean(axis=1)
        V = traj.V
        out["mean_drift"] = np.linalg.norm(vbar - vbar[0], axis=1)
        out["affine_drift"] = np.linalg.norm(xbar - xbar[0] - t[:, None] * vbar[0], axis=1)
        out["v_monotone_residual"] = np.concatenate([[0.0], np.diff(V)])
        out["x_rate_residual"] = np.concatenate(
            [[0.0], np.diff(X) / dt - np.maximum(V[:-1], V[1:])]
        )
    return out


def detect_consensus(traj: Trajectory, tol: float = 1e-6) -> Optional[float]:
    hits = np.nonzero(traj.X < tol)[0]
    return float(traj.times[hits[0]]) if hits.size else None


@dataclass(frozen=True)
class FlockingReport:
    v_time: Optional[float]
    x_sup: float


def detect_flocking(traj: Trajectory, v_tol: float = 1e-4) -> FlockingReport:
    if traj.V is None:
        raise ValueError("flocking detection needs a second-order trajectory")
    hits = np.nonzero(traj.V < v_tol)[0]
    return FlockingReport(
        v_time=float(traj.times[hits[0]]) if hits.size else None,
        x_sup=float(traj.X.max()),
    )


@dataclass(frozen=True)
class RateFit:
    rate: float
    r_squared: float
    n_points: int = 0


def fit_exponential_rate(times, values) -> RateFit:
    """Least-squares line through (t, log value); rate = -slope."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    ok = y > 0
    if not ok.any():
        raise ValueError("no positive values to fit")
    t, logy = t[ok], np.log(y[ok])
    if t.size < 2:
        return RateFit(0.0, 1.0, int(t.size))
    slope, intercept = np.polyfit(t, logy, 1)
    resid = logy - (slope * t + intercept)
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return RateFit(float(-slope), float(r2), int(t.size))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Summary series: t, X, V, mean_drift, v_monotone_residual."""
    mon = traj.monitors
    V = traj.V
    resid = mon.get("v_monotone_residual")
    with open(Path(path), "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "X", "V", "mean_drift", "v_monotone_residual"])
        for k in range(len(traj)):
            wr.writerow(
                [
                    repr(float(traj.times[k])),
                    repr(float(traj.X[k])),
                    "nan" if V is None else repr(float(V[k])),
                    repr(float(mon["mean_drift"][k])),
                    "nan" if resid is None else repr(float(resid[k])),
                ]
            )


def write_state_dump(traj: Trajectory, path) -> None:
    """Full state, one row per agent per recorded instant (lossless floats)."""
    d = traj.dim
    cols = ["t", "agent"] + [f"x{c}" for c in range(d)]
    if traj.velocities is not None:
        cols += [f"v{c}" for c in range(d)]
    with open(Path(path), "w", newline="") as fh:
        fh.write(f"{STATE_HEADER} order={traj.order} step={traj.step!r}\n")
        wr = csv.writer(fh)
        wr.writerow(cols)
        for k in range(len(traj)):
            tk = repr(float(traj.times[k]))
            for i in range(traj.n_agents):
                row = [tk, i] + [repr(float(a)) for a in traj.positions[k, i]]
                if traj.velocities is not None:
                    row += [repr(float(a)) for a in traj.velocities[k, i]]
                wr.writerow(row)


def read_state_dump(path, schedule: WeightSchedule, kernel: Kernel) -> Trajectory:
    path = Path(path)
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith(STATE_HEADER):
            raise ValueError(f"{path} is not a flockyap state dump")
        meta = dict(tok.split("=", 1) for tok in first[len(STATE_HEADER):].split())
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    d = sum(1 for c in header if c.startswith("x"))
    order = meta.get("order", "second" if any(c.startswith("v") for c in header) else "first")
    data = np.array([[float(c) for c in r] for r in body if r])
    n = int(data[:, 1].max()) + 1
    data = data.reshape(-1, n, data.shape[1])
    times = data[:, 0, 0]
    xs = data[:, :, 2 : 2 + d]
    vs = data[:, :, 2 + d : 2 + 2 * d] if order == "second" else None
    step = float(meta.get("step", np.min(np.diff(times)) if times.size > 1 else 0.0))
    return Trajectory(order, times, np.ascontiguousarray(xs), None if vs is None else np.ascontiguousarray(vs), schedule, kernel, step)
