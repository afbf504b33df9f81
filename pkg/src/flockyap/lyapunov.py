"""Strict Lyapunov functionals along recorded trajectories.

The cross-term operator

    psi(t) = (1 + c^2) tau Id - (1/tau) int_t^{t+tau} int_t^s L(r, x(r)) dr ds

is built from running integrals of the state Laplacian. Between recorded
nodes the Laplacian is interpolated linearly (each step lies in a single
schedule cell, so the interpolant uses that cell's weights at both ends);
the integrals of the interpolant are exact, giving O(h^2) accuracy overall.
"""
from __future__ import annotations

import math
import weakref
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dynamics import Trajectory
from .kernels import PowerLawKernel, RescaledKernel, critical_radius
from .laplacian import _complement_basis, _laplacian_matrix

CONSENSUS_REL_TOL = 1e-6
SLACK_H2 = 10.0
LEMMA_MARGIN = -1e-8
BLOWUP_FRACTION = 0.99
CONSERVATIVE_MARGIN = 1.1


class WindowIntegrals:
    """Running integrals F(t) = int_0^t L and G(t) = int_0^t F over a trajectory."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        t = traj.times
        n = traj.n_agents
        K = t.size
        h = np.diff(t)
        x = traj.positions
        w = np.stack([traj.schedule.sample(tk).entries for tk in t[:-1]]) if K > 1 else np.zeros((0, n, n))
        phi = traj.kernel
        dist = _batch_distances(x)
        phis = np.asarray(phi(dist)).reshape(dist.shape)
        # Lp[k]: start of step k; Lm[k]: end of step k (same cell weights).
        self.Lp = _laplacian_matrix(_nodiag(w * phis[:-1]))
        self.Lm = _laplacian_matrix(_nodiag(w * phis[1:]))
        dF = 0.5 * h[:, None, None] * (self.Lp + self.Lm)
        dG = h[:, None, None] ** 2 * (self.Lp / 3.0 + self.Lm / 6.0)
        F = np.zeros((K, n, n))
        G = np.zeros((K, n, n))
        if K > 1:
            F[1:] = np.cumsum(dF, axis=0)
            G[1:] = np.cumsum(dG + h[:, None, None] * F[:-1], axis=0)
        self.F = F
        self.G = G
        self.h = h

    def _locate(self, s: float):
        t = self.traj.times
        if s < -1e-12 or s > t[-1] * (1 + 1e-12) + 1e-12:
            raise ValueError(f"time {s} outside trajectory [0, {t[-1]}]")
        k = int(np.searchsorted(t, s, side="right")) - 1
        k = min(max(k, 0), t.size - 1)
        if k < t.size - 1 and math.isclose(s, t[k + 1], rel_tol=1e-12, abs_tol=1e-12):
            k += 1
        return k, s - t[k]

    def F_at(self, s: float) -> np.ndarray:
        k, u = self._locate(s)
        if u <= 0 or k >= self.h.size:
            return self.F[k]
        hk, a, b = self.h[k], self.Lp[k], self.Lm[k]
        return self.F[k] + u * a + u * u / (2 * hk) * (b - a)

    def G_at(self, s: float) -> np.ndarray:
        k, u = self._locate(s)
        if u <= 0 or k >= self.h.size:
            return self.G[k]
        hk, a, b = self.h[k], self.Lp[k], self.Lm[k]
        return self.G[k] + u * self.F[k] + u * u / 2 * a + u**3 / (6 * hk) * (b - a)

    def window_average(self, t: float, tau: float) -> np.ndarray:
        """(1/tau) int_t^{t+tau} L(s, x(s)) ds."""
        return (self.F_at(t + tau) - self.F_at(t)) / tau

    def double_integral(self, t: float, tau: float) -> np.ndarray:
        """(1/tau) int_t^{t+tau} int_t^s L(r, x(r)) dr ds."""
        return (self.G_at(t + tau) - self.G_at(t) - tau * self.F_at(t)) / tau

    def node_double_integrals(self, tau: float):
        """Double integrals at every node k with t_k + tau inside the trajectory."""
        t = self.traj.times
        ks = np.nonzero(t + tau <= t[-1] * (1 + 1e-12) + 1e-12)[0]
        out = np.empty((ks.size,) + self.F.shape[1:])
        for i, k in enumerate(ks):
            out[i] = (self.G_at(t[k] + tau) - self.G[k] - tau * self.F[k]) / tau
        return ks, out

    def norms(self) -> np.ndarray:
        """B-operator norms of the state Laplacian at each step start and end."""
        if self.Lp.shape[0] == 0:
            return np.zeros(1)
        both = np.concatenate([self.Lp, self.Lm])
        return np.abs(np.linalg.eigvalsh(both)).max(axis=1)


def _batch_distances(x: np.ndarray) -> np.ndarray:
    diff = x[:, :, None, :] - x[:, None, :, :]
    return np.sqrt(np.einsum("kijd,kijd->kij", diff, diff))


def _nodiag(a: np.ndarray) -> np.ndarray:
    idx = np.arange(a.shape[-1])
    a = a.copy()
    a[..., idx, idx] = 0.0
    return a


_cache: "weakref.WeakKeyDictionary[Trajectory, WindowIntegrals]" = weakref.WeakKeyDictionary()


def window_integrals(traj: Trajectory) -> WindowIntegrals:
    wi = _cache.get(traj)
    if wi is None:
        wi = WindowIntegrals(traj)
        _cache[traj] = wi
    return wi


def _centered(a: np.ndarray) -> np.ndarray:
    return a - a.mean(axis=-2, keepdims=True)


def _bform(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batched B(y, x) for arrays (..., N, d)."""
    n = x.shape[-2]
    return np.einsum("...nd,...nd->...", y, x) / n - np.einsum(
        "...d,...d->...", y.mean(axis=-2), x.mean(axis=-2)
    )


@dataclass(frozen=True)
class LyapunovConstants:
    R: float
    C_R: float
    C0: float
    c: float
    tau: float
    mu: float
    alpha: float
    eps_const: float
    lambda_const: float
    conservative: bool = False

    @property
    def q(self) -> float:
        """sqrt((1 + c^2) tau)."""
        return math.sqrt((1.0 + self.c**2) * self.tau)

    def to_dict(self) -> dict:
        return asdict(self)


def consensus_parameters(C0: float, c: float, tau: float, mu: float):
    """(eps, lambda, alpha) closing the consensus dissipation estimate."""
    q = math.sqrt((1.0 + c * c) * tau)
    if c == 0.0:
        eps = math.inf
        lam = 1.0 / (2.0 * math.sqrt(tau))
    else:
        eps = C0 * mu / (2.0 * c**3 * tau * math.sqrt(1.0 + c * c))
        lam = 1.0 / (2.0 * math.sqrt(tau)) + c**3 * math.sqrt(tau) / (2.0 * eps)
    alpha = C0 * mu / (4.0 * q * (lam + q))
    return eps, lam, alpha


def compute_constants(
    traj: Trajectory, tau: float, mu: float, conservative: bool = False
) -> LyapunovConstants:
    """Realized constants R, C_R, C0, c and the derived (eps, lambda, alpha).

    With ``conservative=True`` C0 and c are bounded over the ball of radius
    1.1 R instead of the realized states.
    """
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    if not tau > 0 or not 0 < mu <= 1:
        raise ValueError("need tau > 0 and mu in (0, 1]")
    kernel = traj.kernel
    R = float(np.linalg.norm(traj.positions, axis=2).max())
    radii = np.linspace(0.0, 2.0 * R * (CONSERVATIVE_MARGIN if conservative else 1.0), 513)
    C_R = float(np.max(kernel(radii)))
    wi = window_integrals(traj)
    if conservative:
        R_ball = CONSERVATIVE_MARGIN * R
        C0 = float(np.min(kernel(radii)))
        # Entrywise domination of weights bounds the largest Laplacian eigenvalue.
        ws = np.stack([traj.schedule.sample(t).entries for t in traj.times])
        lap_xi = _laplacian_matrix(ws)
        c2 = C_R * float(np.abs(np.linalg.eigvalsh(lap_xi)).max())
        R = R_ball
    else:
        dist = _batch_distances(traj.positions)
        n = traj.n_agents
        off = ~np.eye(n, dtype=bool)
        C0 = float(np.min(np.asarray(kernel(dist[:, off]))))
        c2 = float(wi.norms().max())
    c = math.sqrt(max(c2, 0.0))
    eps, lam, alpha = consensus_parameters(C0, c, tau, mu)
    return LyapunovConstants(
        R=R, C_R=C_R, C0=C0, c=c, tau=float(tau), mu=float(mu),
        alpha=alpha, eps_const=eps, lambda_const=lam, conservative=conservative,
    )


def psi_tau(traj: Trajectory, t: float, consts: LyapunovConstants) -> np.ndarray:
    """The cross-term operator at time t as an N x N matrix (acts blockwise)."""
    tau = consts.tau
    if t + tau > traj.t_end * (1 + 1e-12) + 1e-12:
        raise ValueError(f"trajectory ends at {traj.t_end}, window [{t}, {t + tau}] needed")
    n = traj.n_agents
    return (1.0 + consts.c**2) * tau * np.eye(n) - window_integrals(traj).double_integral(t, tau)


def psi_derivative(traj: Trajectory, t: float, consts: LyapunovConstants) -> np.ndarray:
    """L(t, x(t)) - window average, taken from the right at breakpoints."""
    wi = window_integrals(traj)
    k, _ = wi._locate(t)
    lap_now = wi.Lp[min(k, wi.Lp.shape[0] - 1)]
    return lap_now - wi.window_average(t, consts.tau)


def _node_psi(traj: Trajectory, consts: LyapunovConstants):
    ks, dbl = window_integrals(traj).node_double_integrals(consts.tau)
    eye = np.eye(traj.n_agents)
    return ks, (1.0 + consts.c**2) * consts.tau * eye - dbl


def x_cal(traj: Trajectory, t: float, consts: LyapunovConstants) -> float:
    """lambda X(t) + sqrt(B(psi(t) x(t), x(t)))."""
    k = traj.index_of(t)
    x = _centered(traj.positions[k])
    psi = psi_tau(traj, float(traj.times[k]), consts)
    return consts.lambda_const * float(traj.X[k]) + math.sqrt(max(_bform(psi @ x, x), 0.0))


def x_cal_series(traj: Trajectory, consts: LyapunovConstants):
    """(times, values) of the consensus functional on every admissible node."""
    ks, psi = _node_psi(traj, consts)
    x = _centered(traj.positions[ks])
    quad = np.maximum(_bform(psi @ x, x), 0.0)
    return traj.times[ks], consts.lambda_const * traj.X[ks] + np.sqrt(quad)


@dataclass(frozen=True)
class FlockingTuning:
    eps0: float
    c: float
    tau: float

    def __post_init__(self):
        if not self.eps0 > 0 or not self.tau > 0:
            raise ValueError("eps0 and tau must be positive")

    @property
    def T_eps0(self) -> float:
        return 1.0 / (4.0 * self.eps0**2)

    @property
    def blowup_time(self) -> float:
        return 1.0 / (2.0 * self.eps0**2)

    @property
    def q(self) -> float:
        return math.sqrt((1.0 + self.c**2) * self.tau)

    @property
    def alpha1(self) -> float:
        return self.c**3 * math.sqrt(self.tau) / 2.0

    @property
    def beta1(self) -> float:
        return self.q + 1.0 / (2.0 * math.sqrt(self.tau))

    @property
    def alpha2(self) -> float:
        return self.c**3 * math.sqrt(2.0 * self.tau) / 4.0

    @property
    def beta2(self) -> float:
        return math.sqrt(self.tau) + 1.0 / (2.0 * math.sqrt(self.tau))

    @property
    def alpha3(self) -> float:
        return 2.0 * self.q * self.alpha1

    @property
    def beta3(self) -> float:
        return 2.0 * self.q * self.beta1

    @property
    def alpha2p(self) -> float:
        return 2.0 * self.q * self.alpha2

    @property
    def beta2p(self) -> float:
        return 2.0 * self.q * self.beta2

    def eps(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t >= self.blowup_time):
            raise ValueError(f"eps(t) blows up at t = {self.blowup_time}")
        return self.eps0 / np.sqrt(1.0 - 2.0 * self.eps0**2 * t)

    def lam(self, t):
        return 1.0 / (2.0 * math.sqrt(self.tau)) + self.c**3 * math.sqrt(self.tau) / (2.0 * self.eps(t))

    def lower_coef(self) -> float:
        return self.alpha2 / self.eps0 + self.beta2

    def upper_coef(self) -> float:
        return self.alpha1 / self.eps0 + self.beta1

    def coefficients(self) -> dict:
        names = ("alpha1", "beta1", "alpha2", "beta2", "alpha3", "beta3", "alpha2p", "beta2p")
        return {k: getattr(self, k) for k in names}


def v_cal(traj: Trajectory, t: float, tuning: FlockingTuning, consts: LyapunovConstants) -> float:
    """lambda(t) V(t) + sqrt(B(psi(t) v(t), v(t)))."""
    if traj.velocities is None:
        raise ValueError("velocity functional needs a second-order trajectory")
    k = traj.index_of(t)
    tk = float(traj.times[k])
    v = _centered(traj.velocities[k])
    psi = psi_tau(traj, tk, consts)
    return float(tuning.lam(tk)) * float(traj.V[k]) + math.sqrt(max(_bform(psi @ v, v), 0.0))


def v_cal_series(traj: Trajectory, tuning: FlockingTuning, consts: LyapunovConstants, t_max: float):
    ks, psi = _node_psi(traj, consts)
    keep = traj.times[ks] <= t_max
    ks, psi = ks[keep], psi[keep]
    v = _centered(traj.velocities[ks])
    quad = np.maximum(_bform(psi @ v, v), 0.0)
    t = traj.times[ks]
    return t, tuning.lam(t) * traj.V[ks] + np.sqrt(quad), ks


@dataclass
class DissipationReport:
    holds: bool
    max_residual: float
    slack: float
    n_samples: int
    t_range: tuple
    initial_value: float
    times: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)
    notes: list = field(default_factory=list)
    lemma_min_margin: Optional[float] = None
    lemma_min_eig_margin: Optional[float] = None
    lemma_holds: Optional[bool] = None

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("times", "residuals")}
        d["t_range"] = list(self.t_range)
        return d


def _central_differences(t: np.ndarray, y: np.ndarray):
    return (y[2:] - y[:-2]) / (t[2:] - t[:-2])


def _subsample(idx: np.ndarray, sample_times) -> np.ndarray:
    if sample_times is None:
        return idx
    return np.unique(np.clip(np.searchsorted(idx, sample_times), 0, idx.size - 1))


def check_consensus_dissipation(
    traj: Trajectory, consts: LyapunovConstants, sample_times: Optional[Sequence[float]] = None
) -> DissipationReport:
    """Residuals of d/dt Xcal + alpha Xcal at interior nodes (positive = violation)."""
    t, xc = x_cal_series(traj, consts)
    h = float(np.max(np.diff(traj.times))) if len(traj) > 1 else 0.0
    x0 = float(xc[0]) if xc.size else 0.0
    slack = x0 * (CONSENSUS_REL_TOL + SLACK_H2 * h * h)
    if xc.size < 3:
        return DissipationReport(True, -math.inf, slack, 0, (0.0, 0.0), x0, notes=["horizon too short"])
    res = _central_differences(t, xc) + consts.alpha * xc[1:-1]
    tt = t[1:-1]
    sel = np.arange(tt.size)
    if sample_times is not None:
        sel = np.unique(np.clip(np.searchsorted(tt, sample_times), 0, tt.size - 1))
    res, tt = res[sel], tt[sel]
    mx = float(res.max())
    return DissipationReport(
        holds=bool(mx <= slack),
        max_residual=mx,
        slack=slack,
        n_samples=int(res.size),
        t_range=(float(tt[0]), float(tt[-1])),
        initial_value=x0,
        times=tt,
        residuals=res,
    )


def rescaled_kernel_for(traj: Trajectory, tau: float) -> RescaledKernel:
    return RescaledKernel(
        base=traj.kernel,
        n_agents=traj.n_agents,
        tau=tau,
        v0=float(traj.V[0]) if traj.V is not None else 0.0,
        x0_dev=float(traj.X[0]),
    )


def check_flocking_dissipation(
    traj: Trajectory,
    tuning: FlockingTuning,
    consts: LyapunovConstants,
    rescaled: Optional[RescaledKernel] = None,
    n_vectors: int = 1000,
    seed: int = 0,
) -> DissipationReport:
    """Residuals of d/dt Vcal + mu phi_tau(X) V / (2 q) and the window-average lower bound.

    The dissipation is monitored on [0, 0.99 * 2 T_eps0] (truncated before the
    tuning curve blows up and to windows fitting inside the trajectory).
    """
    if traj.velocities is None:
        raise ValueError("flocking monitor needs a second-order trajectory")
    rk = rescaled or rescaled_kernel_for(traj, consts.tau)
    notes = []
    t_max = BLOWUP_FRACTION * 2.0 * tuning.T_eps0
    notes.append(f"monitored up to 0.99 * 2 T_eps0 = {t_max:.6g} (tuning-curve blow-up at {tuning.blowup_time:.6g})")
    if t_max > traj.t_end - consts.tau:
        notes.append(f"truncated to trajectory window limit {traj.t_end - consts.tau:.6g}")
    t, vc, ks = v_cal_series(traj, tuning, consts, t_max)
    h = float(np.max(np.diff(traj.times))) if len(traj) > 1 else 0.0
    v0 = float(vc[0]) if vc.size else 0.0
    slack = v0 * (CONSENSUS_REL_TOL + SLACK_H2 * h * h)
    if vc.size < 3:
        return DissipationReport(True, -math.inf, slack, 0, (0.0, 0.0), v0, notes=notes + ["too few samples"])
    X = traj.X[ks[1:-1]]
    V = traj.V[ks[1:-1]]
    rate = consts.mu * np.asarray(rk(X)) / (2.0 * consts.q)
    res = _central_differences(t, vc) + rate * V
    mx = float(res.max())
    lemma = lemma_window_bound(traj, consts, rk, n_vectors=n_vectors, seed=seed)
    return DissipationReport(
        holds=bool(mx <= slack),
        max_residual=mx,
        slack=slack,
        n_samples=int(res.size),
        t_range=(float(t[1]), float(t[-2])),
        initial_value=v0,
        times=t[1:-1],
        residuals=res,
        notes=notes,
        lemma_min_margin=lemma["min_margin"],
        lemma_min_eig_margin=lemma["min_eig_margin"],
        lemma_holds=lemma["holds"],
    )


def lemma_window_bound(
    traj: Trajectory,
    consts: LyapunovConstants,
    rk: RescaledKernel,
    n_vectors: int = 1000,
    seed: int = 0,
) -> dict:
    """Check B(A w, w) >= mu phi_tau(X(t)) B(w, w), A the window-averaged state Laplacian.

    Random mean-zero unit vectors are paired with random admissible window
    starts; the smallest restricted eigenvalue of A is checked as well.
    """
    wi = window_integrals(traj)
    tau = consts.tau
    t = traj.times
    ks = np.nonzero(t + tau <= t[-1] * (1 + 1e-12) + 1e-12)[0]
    rng = np.random.default_rng(seed)
    picks = rng.choice(ks, size=n_vectors)
    n, d = traj.n_agents, traj.dim
    q = _complement_basis(n)
    margins = np.empty(n_vectors)
    avg_cache: dict = {}
    for i, k in enumerate(picks):
        A = avg_cache.get(k)
        if A is None:
            A = avg_cache[k] = wi.window_average(float(t[k]), tau)
        w = rng.standard_normal((n, d))
        w -= w.mean(axis=0)
        w /= math.sqrt(_bform(w, w))
        margins[i] = _bform(A @ w, w) - consts.mu * float(rk(traj.X[k]))
    eig_margins = []
    for k, A in avg_cache.items():
        lo = float(np.linalg.eigvalsh(q.T @ A @ q)[0])
        eig_margins.append(lo - consts.mu * float(rk(traj.X[k])))
    mm = float(margins.min())
    return {
        "min_margin": mm,
        "min_eig_margin": float(min(eig_margins)),
        "holds": bool(mm >= LEMMA_MARGIN),
        "n_vectors": int(n_vectors),
        "n_windows": len(avg_cache),
    }


@dataclass(frozen=True)
class FlockingBound:
    eps0: float
    T: float
    x_m: float
    v_bound_at_T: float
    prefactor: float
    exponent_arg: float
    A1: float
    A2: float
    A3: float
    A4: float
    C1: float
    C2: float
    C3: float
    C4: float
    phi_lower: float
    asymptotic_exponent: float
    asymptotic_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def flocking_bound(
    tuning: FlockingTuning,
    consts: LyapunovConstants,
    rescaled: RescaledKernel,
    v0: float,
    hypothesis: Optional[tuple] = None,
) -> FlockingBound:
    """Velocity-spread bound at T_eps0 and its asymptotic form.

    ``hypothesis`` is the (K, sigma, beta) lower power law of the kernel;
    taken from the kernel itself for power-law kernels.

    Composition of the asymptotic constants (a = 2 sqrt(N), q = sqrt((1+c^2) tau)):
      A1 = 2 q beta1 V0 / mu,  A2 = 2 q alpha1 V0 / mu   (X_M = inverse primitive of A1 + A2/eps0)
      A3 = a (1 - beta) / K,  A4 = (sigma + a (X0 + tau V0))^(1 - beta)
      C1 = A3 A1 + A4,  C2 = A3 A2  =>  phi_tau(X_M) >= K (C1 + C2/eps0)^(beta/(beta-1))
      C3 = V0 max(alpha1/alpha2, beta1/beta2),  C4 = K (C1 + 2 C2)^(-beta/(1-beta)) / (2 alpha3 + beta3)
    so that V(T) <= C3 exp(-C4 mu T^((1-2 beta)/(2(1-beta)))) for T >= 1.
    """
    if hypothesis is None:
        base = rescaled.base
        if not isinstance(base, PowerLawKernel):
            raise ValueError("hypothesis (K, sigma, beta) required for non power-law kernels")
        hypothesis = (base.K, base.sigma, base.beta)
    K, sigma, beta = (float(v) for v in hypothesis)
    if not 0.0 < beta < 0.5:
        raise ValueError(f"flocking bound needs beta in (0, 1/2), got {beta}")
    eps0, tau, mu = tuning.eps0, consts.tau, consts.mu
    a1, b1 = tuning.alpha1, tuning.beta1
    a2, b2 = tuning.alpha2, tuning.beta2
    a3, b3 = tuning.alpha3, tuning.beta3
    x_m = critical_radius(rescaled, eps0, tuning.c, tau, mu, a1, b1, v0)
    prefactor = (a1 + b1 * eps0) / (a2 + b2 * eps0)
    expo = mu * float(rescaled(x_m)) / (4.0 * (a3 + b3 * eps0) * eps0)
    q = tuning.q
    a = rescaled.scale
    A1 = 2.0 * q * b1 * v0 / mu
    A2 = 2.0 * q * a1 * v0 / mu
    A3 = a * (1.0 - beta) / K
    A4 = (sigma + a * (rescaled.x0_dev + tau * rescaled.v0)) ** (1.0 - beta)
    C1 = A3 * A1 + A4
    C2 = A3 * A2
    phi_lower = K * (C1 + C2 / eps0) ** (beta / (beta - 1.0))
    ratio = max(a1 / a2, b1 / b2) if a2 > 0 else b1 / b2
    C3 = v0 * ratio
    C4 = K * (C1 + 2.0 * C2) ** (-beta / (1.0 - beta)) / (2.0 * a3 + b3)
    p = (1.0 - 2.0 * beta) / (2.0 * (1.0 - beta))
    T = tuning.T_eps0
    return FlockingBound(
        eps0=eps0,
        T=T,
        x_m=float(x_m),
        v_bound_at_T=float(prefactor * v0 * math.exp(-expo)),
        prefactor=float(prefactor),
        exponent_arg=float(expo),
        A1=A1, A2=A2, A3=A3, A4=A4, C1=C1, C2=C2, C3=C3, C4=C4,
        phi_lower=float(phi_lower),
        asymptotic_exponent=p,
        asymptotic_bound=float(C3 * math.exp(-C4 * mu * T**p)),
    )


@dataclass(frozen=True)
class BoundRow:
    eps0: float
    T: float
    x_m: float
    v_bound_at_T: float
    v_sim: float
    v_sim_source: str
    x_sup: float
    v_ok: bool
    x_ok: bool
    v_status: str = "sound"

    def to_dict(self) -> dict:
        return asdict(self)


def simulated_v_at(traj: Trajectory, T: float):
    """V(T) from the record, or V(t_end) when T lies past the horizon.

    V is non-increasing along second-order solutions, so V(t_end) bounds
    V(T) from above for every T >= t_end.
    """
    if T <= traj.t_end:
        return float(np.interp(T, traj.times, traj.V)), "simulated"
    return float(traj.V[-1]), "monotone bound from t_end"


def bound_sweep(
    traj: Trajectory,
    consts: LyapunovConstants,
    eps0_grid: Sequence[float],
    hypothesis: Optional[tuple] = None,
) -> list:
    rk = rescaled_kernel_for(traj, consts.tau)
    v0 = float(traj.V[0])
    rows = []
    for eps0 in eps0_grid:
        tuning = FlockingTuning(float(eps0), consts.c, consts.tau)
        fb = flocking_bound(tuning, consts, rk, v0, hypothesis)
        v_sim, src = simulated_v_at(traj, fb.T)
        upto = traj.times <= min(fb.T, traj.t_end) + 1e-12
        x_sup = float(traj.X[upto].max())
        v_ok = bool(v_sim <= fb.v_bound_at_T)
        # Past the horizon a miss only means V(t_end) is too weak a certificate.
        status = "sound" if v_ok else ("violated" if src == "simulated" else "inconclusive")
        rows.append(
            BoundRow(
                eps0=float(eps0), T=fb.T, x_m=fb.x_m, v_bound_at_T=fb.v_bound_at_T,
                v_sim=v_sim, v_sim_source=src, x_sup=x_sup,
                v_ok=v_ok, x_ok=bool(x_sup <= fb.x_m), v_status=status,
            )
        )
    return rows


def bound_exponent_fit(T: Sequence[float], bounds: Sequence[float], C3: float) -> float:
    """Log-log slope of -log(bound / C3) against T."""
    T = np.asarray(T, dtype=float)
    y = -np.log(np.asarray(bounds, dtype=float) / C3)
    if np.any(y <= 0):
        raise ValueError("bounds must lie strictly below C3 for the exponent fit")
    slope, _ = np.polyfit(np.log(T), np.log(y), 1)
    return float(slope)


def sweep_optimal_eps0(rows: Sequence[BoundRow], t_end: float) -> Optional[BoundRow]:
    """Smallest critical radius among grid points whose T_eps0 covers the horizon."""
    cover = [r for r in rows if r.T >= t_end]
    return min(cover, key=lambda r: r.x_m) if cover else None
