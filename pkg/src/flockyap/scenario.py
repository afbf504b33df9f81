"""JSON scenario documents: parsing, validation, round-trip and state set-up."""
from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .kernels import Kernel, KernelError, kernel_from_dict
from .schedules import ScheduleError, WeightSchedule, schedule_from_dict

log = logging.getLogger(__name__)

DEFAULT_TOLERANCES = {"consensus": 1e-6, "flocking": 1e-4}
DEFAULT_OUTPUTS = {
    "trajectory": "trajectory.csv",
    "states": "states.csv",
    "report": "report.json",
    "verbosity": 1,
}


class ScenarioError(ValueError):
    """Invalid scenario document."""


@dataclass(frozen=True)
class Scenario:
    name: str
    order: str
    n_agents: int
    dim: int
    initial_state: dict
    kernel: dict
    schedule: dict
    t_end: float
    tau: float = 1.0
    mu: Optional[float] = None
    step: Optional[float] = None
    eps0: Optional[float] = None
    eps0_grid: Optional[list] = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    outputs: dict = field(default_factory=lambda: dict(DEFAULT_OUTPUTS))

    def __post_init__(self):
        if self.order not in ("first", "second"):
            raise ScenarioError(f"order must be 'first' or 'second', got {self.order!r}")
        if int(self.n_agents) < 2 or int(self.dim) < 1:
            raise ScenarioError("need n_agents >= 2 and dim >= 1")
        if not self.t_end > 0 or not self.tau > 0:
            raise ScenarioError("t_end and tau must be positive")
        if self.mu is not None and not 0 < self.mu <= 1:
            raise ScenarioError("mu must lie in (0, 1]")
        if self.step is not None and not self.step > 0:
            raise ScenarioError("step must be positive")
        if self.eps0 is not None and not self.eps0 > 0:
            raise ScenarioError("eps0 must be positive")
        kind = self.initial_state.get("kind")
        if kind == "random" and "seed" not in self.initial_state:
            raise ScenarioError("random initial state needs a seed")
        if kind not in ("random", "inline"):
            raise ScenarioError(f"unknown initial_state kind {kind!r}")
        if self.schedule.get("kind") == "bernoulli" and "seed" not in self.schedule:
            raise ScenarioError("bernoulli schedule needs a seed")
        # Validate referenced specs eagerly.
        self.build_kernel()
        self.build_schedule()

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def build_kernel(self) -> Kernel:
        try:
            return kernel_from_dict(self.kernel)
        except (KernelError, KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"invalid kernel: {exc}") from exc

    def build_schedule(self, base_dir: Optional[Path] = None) -> WeightSchedule:
        try:
            s = schedule_from_dict(self.schedule, int(self.n_agents), base_dir)
        except (ScheduleError, KeyError, TypeError, ValueError, OSError) as exc:
            raise ScenarioError(f"invalid schedule: {exc}") from exc
        if s.n_agents != self.n_agents:
            raise ScenarioError(f"schedule has {s.n_agents} agents, scenario {self.n_agents}")
        if s.horizon is not None and s.horizon < self.t_end:
            raise ScenarioError(f"schedule horizon {s.horizon} shorter than t_end {self.t_end}")
        return s

    def with_seed(self, seed: int) -> "Scenario":
        d = self.to_dict()
        if d["initial_state"].get("kind") == "random":
            d["initial_state"]["seed"] = int(seed)
        if d["schedule"].get("kind") == "bernoulli":
            d["schedule"]["seed"] = int(seed)
        return scenario_from_dict(d)


def scenario_from_dict(d: dict) -> Scenario:
    if not isinstance(d, dict):
        raise ScenarioError("scenario must be a JSON object")
    known = set(Scenario.__dataclass_fields__)
    unknown = set(d) - known
    if unknown:
        raise ScenarioError(f"unknown scenario fields: {sorted(unknown)}")
    missing = {"name", "order", "n_agents", "dim", "initial_state", "kernel", "schedule", "t_end"} - set(d)
    if missing:
        raise ScenarioError(f"missing scenario fields: {sorted(missing)}")
    d = copy.deepcopy(d)
    d["tolerances"] = {**DEFAULT_TOLERANCES, **d.get("tolerances", {})}
    d["outputs"] = {**DEFAULT_OUTPUTS, **d.get("outputs", {})}
    try:
        for key in ("t_end", "tau", "mu", "step", "eps0"):
            if d.get(key) is not None:
                d[key] = float(d[key])
        d["n_agents"], d["dim"] = int(d["n_agents"]), int(d["dim"])
        return Scenario(**d)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(str(exc)) from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(doc)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(sc.to_json() + "\n")


def _rescale(a: np.ndarray, target: Optional[float]) -> np.ndarray:
    if target is None:
        return a
    m = a.mean(axis=0)
    dev = a - m
    cur = math.sqrt(float(np.mean(np.sum(dev * dev, axis=1))))
    if cur == 0.0:
        raise ScenarioError("cannot rescale a state already at consensus")
    return m + dev * (float(target) / cur)


def initial_state(sc: Scenario):
    """(x0, v0) from the scenario; v0 is None for first-order runs."""
    spec = sc.initial_state
    n, d = sc.n_agents, sc.dim
    if spec["kind"] == "inline":
        x = np.asarray(spec["positions"], dtype=float).reshape(n, d)
        v = None
        if sc.order == "second":
            if "velocities" not in spec:
                raise ScenarioError("second-order inline state needs velocities")
            v = np.asarray(spec["velocities"], dtype=float).reshape(n, d)
        return x, v
    rng = np.random.default_rng(int(spec["seed"]))
    box = float(spec.get("box", 1.0))
    vbox = float(spec.get("velocity_box", box))
    x = rng.uniform(-box, box, size=(n, d))
    v = rng.uniform(-vbox, vbox, size=(n, d))
    x = _rescale(x, spec.get("x_dev"))
    if sc.order == "first":
        return x, None
    return x, _rescale(v, spec.get("v_dev"))


def resolve_step(sc: Scenario, schedule: WeightSchedule) -> float:
    """Integration step, shrunk so that it divides the schedule mesh."""
    from .dynamics import default_step

    if sc.step is None:
        return default_step(schedule)
    mesh = schedule.mesh
    if math.isinf(mesh) or sc.step >= mesh:
        if not math.isinf(mesh) and sc.step > mesh:
            log.warning("step %g exceeds mesh %g; using mesh", sc.step, mesh)
            return mesh
        return sc.step
    ratio = mesh / sc.step
    n = math.ceil(ratio - 1e-9)
    if not math.isclose(ratio, n, rel_tol=1e-9):
        adj = mesh / n
        log.warning("step %g does not divide mesh %g; using %g", sc.step, mesh, adj)
        return adj
    return sc.step
