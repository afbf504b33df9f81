"""Piecewise-constant communication-weight schedules xi_ij(t).

Every schedule is right-continuous: on ``[a, b)`` it takes the value at ``a``.
"""
from __future__ import annotations

import csv
import math
import threading
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .laplacian import WeightMatrix

# Relative distance under which a time is snapped onto a mesh breakpoint.
SNAP = 1e-9


class ScheduleError(ValueError):
    pass


def cell_index(t: float, mesh: float) -> int:
    """Index k of the mesh cell [k*mesh, (k+1)*mesh) containing t."""
    q = t / mesh
    k = round(q)
    if abs(q - k) <= SNAP * max(1.0, abs(q)):
        return int(k)
    return int(math.floor(q))


class WeightSchedule:
    """Base class. Subclasses define ``sample`` and ``breakpoints``."""

    kind = "abstract"
    n_agents: int
    mesh: float
    horizon: Optional[float] = None
    period: Optional[float] = None

    def _check_time(self, t: float) -> None:
        if t < 0:
            raise ScheduleError(f"schedule sampled at negative time {t}")
        if self.horizon is not None and t > self.horizon * (1 + 1e-12) + 1e-12:
            raise ScheduleError(f"t = {t} beyond schedule horizon {self.horizon}")

    def sample(self, t: float) -> WeightMatrix:
        raise NotImplementedError

    def breakpoints(self, t0: float, t1: float) -> list:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


def _interior(b: float, t0: float, t1: float) -> bool:
    tol = SNAP * max(1.0, abs(b))
    return t0 + tol < b < t1 - tol


def _mesh_breakpoints(mesh: float, t0: float, t1: float) -> list:
    if t1 < t0:
        raise ScheduleError("breakpoints need t0 <= t1")
    k0 = cell_index(t0, mesh)
    if k0 * mesh < t0 and not math.isclose(k0 * mesh, t0, rel_tol=SNAP, abs_tol=SNAP):
        k0 += 1
    out = []
    k = k0
    while True:
        b = k * mesh
        if b > t1 and not math.isclose(b, t1, rel_tol=SNAP, abs_tol=SNAP):
            break
        out.append(b)
        k += 1
    return out


class ConstantSchedule(WeightSchedule):
    kind = "constant"

    def __init__(self, weights: WeightMatrix):
        if not isinstance(weights, WeightMatrix):
            weights = WeightMatrix(weights)
        self.weights = weights
        self.n_agents = weights.n_agents
        self.mesh = math.inf
        self.horizon = None
        self.period = None

    def sample(self, t: float) -> WeightMatrix:
        self._check_time(t)
        return self.weights

    def breakpoints(self, t0: float, t1: float) -> list:
        if t1 < t0:
            raise ScheduleError("breakpoints need t0 <= t1")
        return []

    def to_dict(self) -> dict:
        return {"kind": "constant", "weights": self.weights.entries.tolist()}


class PeriodicSchedule(WeightSchedule):
    """Cycles through ``slots``, each held for ``mesh`` time units."""

    kind = "piecewise_periodic"

    def __init__(self, slots: Sequence[WeightMatrix], mesh: float):
        if not slots:
            raise ScheduleError("periodic schedule needs at least one slot")
        if not mesh > 0:
            raise ScheduleError("mesh must be positive")
        slots = [s if isinstance(s, WeightMatrix) else WeightMatrix(s) for s in slots]
        n = slots[0].n_agents
        if any(s.n_agents != n for s in slots):
            raise ScheduleError("all slots must have the same number of agents")
        self.slots = tuple(slots)
        self.n_agents = n
        self.mesh = float(mesh)
        self.period = self.mesh * len(slots)
        self.horizon = None

    def slot_index(self, t: float) -> int:
        return cell_index(t, self.mesh) % len(self.slots)

    def sample(self, t: float) -> WeightMatrix:
        self._check_time(t)
        return self.slots[self.slot_index(t)]

    def breakpoints(self, t0: float, t1: float) -> list:
        out = []
        for b in _mesh_breakpoints(self.mesh, t0, t1):
            if not _interior(b, t0, t1):
                continue
            k = cell_index(b, self.mesh)
            # Only instants where the value actually changes.
            if self.slots[(k - 1) % len(self.slots)] != self.slots[k % len(self.slots)]:
                out.append(b)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "piecewise_periodic",
            "mesh": self.mesh,
            "slots": [s.entries.tolist() for s in self.slots],
        }


class ExampleN4Schedule(PeriodicSchedule):
    """The four-agent switching example: six slots of length tau/6.

    Slot 1 links agents 1-4, slot 3 links 3-4, slot 5 links 2-3 and 2-4
    (agents numbered from 1); even slots carry no links.
    """

    kind = "example_n4"

    def __init__(self, tau: float):
        if not tau > 0:
            raise ScheduleError("tau must be positive")
        empty = WeightMatrix.zeros(4)
        slots = [
            empty,
            WeightMatrix.from_edges(4, [(0, 3)]),
            empty,
            WeightMatrix.from_edges(4, [(2, 3)]),
            empty,
            WeightMatrix.from_edges(4, [(1, 2), (1, 3)]),
        ]
        super().__init__(slots, tau / 6.0)
        self.tau = float(tau)

    def to_dict(self) -> dict:
        return {"kind": "example_n4", "tau": self.tau}


def example_n4_schedule(tau: float) -> ExampleN4Schedule:
    return ExampleN4Schedule(tau)


class BernoulliSchedule(WeightSchedule):
    """Each edge of ``base`` independently kept with probability ``p`` per mesh cell.

    Cells are regenerated on demand from ``(seed, cell)`` so sampling is
    order-independent and reproducible.
    """

    kind = "bernoulli"

    def __init__(self, base: WeightMatrix, p: float, mesh: float, seed: int, horizon: float):
        if not isinstance(base, WeightMatrix):
            base = WeightMatrix(base)
        if not 0.0 <= p <= 1.0:
            raise ScheduleError(f"p must lie in [0, 1], got {p}")
        if not mesh > 0 or not horizon > 0:
            raise ScheduleError("mesh and horizon must be positive")
        self.base = base
        self.p = float(p)
        self.mesh = float(mesh)
        self.seed = int(seed)
        self.horizon = float(horizon)
        self.period = None
        self.n_agents = base.n_agents
        self._iu = np.triu_indices(self.n_agents, 1)
        self._cache: dict = {}
        self._lock = threading.Lock()

    def cell(self, k: int) -> WeightMatrix:
        hit = self._cache.get(k)
        if hit is not None:
            return hit
        rng = np.random.default_rng([self.seed, int(k)])
        keep = rng.random(len(self._iu[0])) < self.p
        w = np.zeros((self.n_agents, self.n_agents))
        w[self._iu] = np.where(keep, self.base.entries[self._iu], 0.0)
        mat = WeightMatrix(w + w.T)
        with self._lock:
            self._cache[k] = mat
        return mat

    def sample(self, t: float) -> WeightMatrix:
        self._check_time(t)
        return self.cell(cell_index(t, self.mesh))

    def breakpoints(self, t0: float, t1: float) -> list:
        return [b for b in _mesh_breakpoints(self.mesh, t0, t1) if _interior(b, t0, t1)]

    def to_dict(self) -> dict:
        return {
            "kind": "bernoulli",
            "base": self.base.entries.tolist(),
            "p": self.p,
            "mesh": self.mesh,
            "seed": self.seed,
            "horizon": self.horizon,
        }


def bernoulli_schedule(base, p: float, mesh: float, seed: int, horizon: float) -> BernoulliSchedule:
    return BernoulliSchedule(base, p, mesh, seed, horizon)


class TableSchedule(WeightSchedule):
    """Explicit breakpoint table of ``(t_start, i, j, weight)`` rows.

    All rows sharing a ``t_start`` define the matrix that holds from that
    instant to the next listed ``t_start`` (or the horizon); unlisted entries
    are zero. Before the first ``t_start`` the matrix is zero. Indices are 0-based.
    """

    kind = "table"

    def __init__(self, n_agents: int, rows: Sequence, horizon: float):
        if not horizon > 0:
            raise ScheduleError("table horizon must be positive")
        pieces: dict = {}
        for row in rows:
            t, i, j, w = float(row[0]), int(row[1]), int(row[2]), float(row[3])
            if t < 0 or t >= horizon:
                raise ScheduleError(f"row start {t} outside [0, {horizon})")
            pieces.setdefault(t, []).append((i, j, w))
        starts = sorted(pieces)
        self.n_agents = int(n_agents)
        self.horizon = float(horizon)
        self.period = None
        self.rows = [tuple(r) for r in rows]
        self.starts = np.array(starts, dtype=float)
        self.matrices = [WeightMatrix.from_edges(self.n_agents, pieces[t]) for t in starts]
        knots = np.concatenate([[0.0], self.starts, [self.horizon]])
        gaps = np.diff(knots)
        gaps = gaps[gaps > 0]
        self.mesh = float(gaps.min()) if gaps.size else self.horizon
        self._zero = WeightMatrix.zeros(self.n_agents)

    @classmethod
    def from_csv(cls, path, n_agents: int, horizon: float) -> "TableSchedule":
        rows = []
        with open(Path(path), newline="") as fh:
            for rec in csv.reader(fh):
                if not rec or rec[0].lstrip().startswith("#"):
                    continue
                try:
                    float(rec[0])
                except ValueError:
                    continue  # header line
                rows.append((float(rec[0]), int(rec[1]), int(rec[2]), float(rec[3])))
        return cls(n_agents, rows, horizon)

    def sample(self, t: float) -> WeightMatrix:
        self._check_time(t)
        k = int(np.searchsorted(self.starts, t * (1 + 1e-14) + 1e-14, side="right")) - 1
        return self._zero if k < 0 else self.matrices[k]

    def breakpoints(self, t0: float, t1: float) -> list:
        if t1 < t0:
            raise ScheduleError("breakpoints need t0 <= t1")
        return [float(s) for s in self.starts if _interior(s, t0, t1)]

    def to_dict(self) -> dict:
        return {
            "kind": "table",
            "n_agents": self.n_agents,
            "rows": [list(r) for r in self.rows],
            "horizon": self.horizon,
        }


def _matrix_from_spec(spec, n: int) -> WeightMatrix:
    if isinstance(spec, str):
        if spec == "complete":
            return WeightMatrix.complete(n)
        if spec == "empty":
            return WeightMatrix.zeros(n)
        raise ScheduleError(f"unknown matrix shorthand {spec!r}")
    if isinstance(spec, dict) and "edges" in spec:
        return WeightMatrix.from_edges(n, spec["edges"])
    return WeightMatrix(np.asarray(spec, dtype=float))


def schedule_from_dict(spec: dict, n_agents: int, base_dir: Optional[Path] = None) -> WeightSchedule:
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantSchedule(_matrix_from_spec(spec.get("weights", "complete"), n_agents))
    if kind == "example_n4":
        if n_agents != 4:
            raise ScheduleError("example_n4 schedule requires n_agents = 4")
        return ExampleN4Schedule(float(spec["tau"]))
    if kind == "piecewise_periodic":
        slots = [_matrix_from_spec(s, n_agents) for s in spec["slots"]]
        return PeriodicSchedule(slots, float(spec["mesh"]))
    if kind == "bernoulli":
        return BernoulliSchedule(
            _matrix_from_spec(spec.get("base", "complete"), n_agents),
            float(spec["p"]),
            float(spec["mesh"]),
            int(spec["seed"]),
            float(spec["horizon"]),
        )
    if kind == "table":
        if "path" in spec:
            path = Path(spec["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return TableSchedule.from_csv(path, n_agents, float(spec["horizon"]))
        return TableSchedule(n_agents, spec["rows"], float(spec["horizon"]))
    raise ScheduleError(f"unknown schedule kind {kind!r}")
