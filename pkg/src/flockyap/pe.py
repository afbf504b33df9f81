"""Persistence-of-excitation certificates for weight schedules.

A schedule is persistently exciting with parameters (tau, mu) when every
window average of its Laplacian has algebraic connectivity at least mu.
For piecewise-constant schedules the window average is affine in the window
start between consecutive "events" (a breakpoint entering either window
edge), and lambda_2 is concave along affine segments, so checking the event
instants is exhaustive.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .laplacian import (
    Convention,
    _laplacian_matrix,
    algebraic_connectivity,
    window_average_laplacian,
)
from .schedules import ScheduleError, WeightSchedule

DEFAULT_GRID = 256
CONCAVITY_TOL = 1e-9
# Eigensolver rounding allowance when comparing lambda_2 with mu.
MU_REL_TOL = 1e-12


@dataclass(frozen=True)
class PeCertificate:
    tau: float
    mu: float
    convention: str
    holds: bool
    worst_offset: float
    worst_lambda2: float
    t_grid_spec: str
    exact: bool
    horizon: Optional[float]
    n_offsets: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _dedupe(ts, scale: float) -> np.ndarray:
    ts = np.unique(np.asarray(ts, dtype=float))
    if ts.size == 0:
        return ts
    keep = np.concatenate([[True], np.diff(ts) > 1e-12 * max(1.0, scale)])
    return ts[keep]


def _event_offsets(s: WeightSchedule, tau: float, lo: float, hi: float) -> np.ndarray:
    """Window starts in [lo, hi] where a breakpoint meets either window edge."""
    bps = np.asarray(s.breakpoints(lo, hi + tau), dtype=float)
    cands = np.concatenate([[lo, hi], bps, bps - tau])
    cands = cands[(cands >= lo - 1e-12) & (cands <= hi + 1e-12)]
    return _dedupe(np.clip(cands, lo, hi), hi)


def _lambda2_at(s, t, tau, convention) -> float:
    return algebraic_connectivity(window_average_laplacian(s, t, tau), convention)


def window_lambda2_profile(
    s: WeightSchedule,
    tau: float,
    horizon: Optional[float] = None,
    convention: Convention = Convention.NORMALIZED,
    offsets: Optional[Sequence[float]] = None,
):
    """lambda_2 of the window average for each offset; returns (offsets, lambdas, exact, spec)."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    if math.isinf(s.mesh) and offsets is None:
        # No breakpoints: every window average is the same matrix.
        lam = _lambda2_at(s, 0.0, tau, convention)
        return np.array([0.0]), np.array([lam]), True, "time-invariant schedule: single offset"
    if s.period is not None and offsets is None:
        period = s.period
        events = _event_offsets(s, tau, 0.0, period)
        mids = 0.5 * (events[:-1] + events[1:])
        end_lams = np.array([_lambda2_at(s, t, tau, convention) for t in events])
        mid_lams = np.array([_lambda2_at(s, t, tau, convention) for t in mids])
        # Concavity safeguard: midpoints must not undercut their segment endpoints.
        exact = bool(
            np.all(mid_lams >= np.minimum(end_lams[:-1], end_lams[1:]) - CONCAVITY_TOL)
        )
        ts = np.concatenate([events, mids])
        lams = np.concatenate([end_lams, mid_lams])
        spec = f"exhaustive: {events.size} event offsets + {mids.size} midpoints over one period {period:g}"
        return ts, lams, exact, spec
    h = horizon if horizon is not None else s.horizon
    if h is None:
        raise ValueError("a horizon is required for non-periodic schedules")
    if h < tau:
        raise ValueError(f"horizon {h} shorter than tau {tau}")
    hi = h - tau
    if offsets is None:
        grid = np.linspace(0.0, hi, DEFAULT_GRID)
        ts = _dedupe(np.concatenate([grid, _event_offsets(s, tau, 0.0, hi)]), h)
        spec = f"uniform grid of {DEFAULT_GRID} + breakpoint-aligned offsets on [0, {hi:g}]"
    else:
        ts = np.asarray(offsets, dtype=float)
        if ts.size and (ts.min() < 0 or ts.max() > hi + 1e-12):
            raise ValueError("offsets must lie in [0, horizon - tau]")
        spec = f"{ts.size} user-supplied offsets"
    lams = np.array([_lambda2_at(s, t, tau, convention) for t in ts])
    return ts, lams, False, spec


def check_pe(
    s: WeightSchedule,
    tau: float,
    mu: float,
    horizon: Optional[float] = None,
    offsets: Optional[Sequence[float]] = None,
    convention: Convention = Convention.NORMALIZED,
) -> PeCertificate:
    if not tau > 0:
        raise ValueError("tau must be positive")
    if not 0 < mu <= 1:
        raise ValueError(f"mu must lie in (0, 1], got {mu}")
    if horizon is not None and horizon < tau:
        raise ValueError(f"horizon {horizon} shorter than tau {tau}")
    ts, lams, exact, spec = window_lambda2_profile(s, tau, horizon, convention, offsets)
    i = int(np.argmin(lams))
    worst = float(lams[i])
    h = horizon if horizon is not None else s.horizon
    return PeCertificate(
        tau=float(tau),
        mu=float(mu),
        convention=Convention(convention).value,
        holds=bool(worst >= mu * (1.0 - MU_REL_TOL)),
        worst_offset=float(ts[i]),
        worst_lambda2=worst,
        t_grid_spec=spec,
        exact=exact,
        horizon=None if h is None else float(h),
        n_offsets=int(len(ts)),
    )


def estimate_pe_params(
    s: WeightSchedule,
    tau_grid: Sequence[float],
    horizon: Optional[float] = None,
    convention: Convention = Convention.NORMALIZED,
) -> list:
    """[(tau, mu_star)] with mu_star the worst window lambda_2, clipped to [0, 1]."""
    if len(tau_grid) == 0:
        raise ValueError("tau grid is empty")
    out = []
    for tau in tau_grid:
        _, lams, _, _ = window_lambda2_profile(s, float(tau), horizon, convention)
        out.append((float(tau), float(np.clip(lams.min(), 0.0, 1.0))))
    return out


@dataclass(frozen=True)
class Prop43Report:
    """Verdict on the slot-average connectivity hypothesis."""

    holds: bool
    tau: float
    n_slots: int
    mu: float
    convention: str
    min_lambda2: float
    slot_lambda2: list = field(default_factory=list)
    implied_mu: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def slot_average_weights(s: WeightSchedule, tau: float, n_slots: int, m: int) -> np.ndarray:
    """(1/n) sum_{k<n} xi((m + k) tau / n)."""
    acc = np.zeros((s.n_agents, s.n_agents))
    for k in range(n_slots):
        acc += s.sample((m + k) * tau / n_slots).entries
    return acc / n_slots


def check_prop_43(
    s: WeightSchedule,
    tau: float,
    n_slots: int,
    mu: float,
    convention: Convention = Convention.NORMALIZED,
) -> Prop43Report:
    """Check that every n-slot average graph is connected with lambda_2 >= mu.

    When it is, the schedule is persistently exciting with (tau, mu / 2).
    """
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    mesh = tau / n_slots
    if not math.isinf(s.mesh) and not math.isclose(s.mesh, mesh, rel_tol=1e-9):
        ratio = s.mesh / mesh
        # Constancy on the tau/n cells needs the schedule mesh to be a multiple of tau/n.
        if round(ratio) < 1 or not math.isclose(ratio, round(ratio), rel_tol=1e-9):
            raise ScheduleError(f"schedule mesh {s.mesh} incompatible with tau/n = {mesh}")
    if s.period is not None:
        m_count = max(1, int(round(s.period / mesh)))
    elif s.horizon is not None:
        m_count = int(math.floor(s.horizon / mesh + 1e-9)) - n_slots + 1
        if m_count < 1:
            raise ScheduleError("horizon too short for a single slot average")
    else:
        m_count = 1
    lams = []
    for m in range(m_count):
        lap = _laplacian_matrix(slot_average_weights(s, tau, n_slots, m))
        lams.append(algebraic_connectivity(lap, convention))
    lmin = float(min(lams))
    holds = lmin > 0 and lmin >= mu * (1.0 - MU_REL_TOL)
    return Prop43Report(
        holds=bool(holds),
        tau=float(tau),
        n_slots=int(n_slots),
        mu=float(mu),
        convention=Convention(convention).value,
        min_lambda2=lmin,
        slot_lambda2=[float(x) for x in lams],
        implied_mu=float(mu / 2) if holds else 0.0,
    )
