"""Ensemble states, the variance bilinear form and standard deviations.

States of N agents in R^d are stored as contiguous ``(N, d)`` float arrays.
Every operation acts on the d coordinate columns independently.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

# Below this value X (or V) is treated as exact consensus.
ZERO_VARIANCE = 1e-15


def as_agents(x, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a float ``(N, d)`` array; 1-D input is read as d = 1."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"{name} must have shape (N, d), got {arr.shape}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EnsembleState:
    """Positions (and, for second-order runs, velocities) at time ``time``."""

    positions: np.ndarray
    velocities: Optional[np.ndarray] = None
    time: float = 0.0

    def __post_init__(self):
        x = as_agents(self.positions, "positions")
        if x.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 agents")
        if not np.all(np.isfinite(x)):
            raise ValueError("positions contain non-finite values")
        object.__setattr__(self, "positions", _frozen(x))
        if self.velocities is not None:
            v = as_agents(self.velocities, "velocities")
            if v.shape != x.shape:
                raise ValueError(f"velocities shape {v.shape} != positions shape {x.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError("velocities contain non-finite values")
            object.__setattr__(self, "velocities", _frozen(v))
        if not (self.time >= 0 and np.isfinite(self.time)):
            raise ValueError(f"time must be finite and >= 0, got {self.time}")

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def order(self) -> str:
        return "first" if self.velocities is None else "second"


@dataclass(frozen=True)
class VarianceStats:
    X: float
    V: Optional[float] = None


def variance_form(x, y) -> float:
    """B(x, y) = (1/N) sum_i <x_i, y_i> - <mean(x), mean(y)>."""
    x = as_agents(x)
    y = as_agents(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    # Centered form; the expanded difference cancels badly when means dominate.
    dx = x - x.mean(axis=0)
    dy = y - y.mean(axis=0)
    return float(np.sum(dx * dy) / x.shape[0])


def mean(x) -> np.ndarray:
    return as_agents(x).mean(axis=0)


def std_dev(x) -> float:
    """sqrt(B(x, x)), computed on centered data and clipped at zero."""
    x = as_agents(x)
    dx = x - x.mean(axis=0)
    return float(np.sqrt(max(np.sum(dx * dx) / x.shape[0], 0.0)))


def center(state: EnsembleState) -> EnsembleState:
    x = state.positions - state.positions.mean(axis=0)
    v = None
    if state.velocities is not None:
        v = state.velocities - state.velocities.mean(axis=0)
    return replace(state, positions=x, velocities=v)


def std_devs(state: EnsembleState) -> VarianceStats:
    X = std_dev(state.positions)
    V = None if state.velocities is None else std_dev(state.velocities)
    return VarianceStats(X=X, V=V)


def is_converged(value: float) -> bool:
    return value < ZERO_VARIANCE
