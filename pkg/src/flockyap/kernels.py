"""Interaction kernels, the strong-interaction hypothesis and rescaled primitives."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, optimize

QUAD_TOL = 1e-10
BISECT_XTOL = 1e-12


class KernelError(ValueError):
    pass


class Kernel:
    """Positive, non-increasing interaction kernel phi(r), r >= 0."""

    kind: str = "abstract"

    def __call__(self, r):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        """Radii where phi is not smooth (used to split quadrature)."""
        return np.empty(0)


@dataclass(frozen=True)
class ConstantKernel(Kernel):
    value: float = 1.0
    kind = "constant"

    def __post_init__(self):
        if not self.value > 0:
            raise KernelError(f"constant kernel must be positive, got {self.value}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, self.value)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class PowerLawKernel(Kernel):
    """phi(r) = K / (sigma + r)**beta."""

    K: float = 1.0
    sigma: float = 1.0
    beta: float = 0.25
    kind = "power_law"

    def __post_init__(self):
        if not (self.K > 0 and self.sigma > 0):
            raise KernelError("power_law requires K > 0 and sigma > 0")
        if not 0 < self.beta < 1:
            raise KernelError(f"power_law requires beta in (0, 1), got {self.beta}")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = self.K * (self.sigma + r) ** (-self.beta)
        return float(out) if out.ndim == 0 else out

    def to_dict(self) -> dict:
        return {"kind": "power_law", "K": self.K, "sigma": self.sigma, "beta": self.beta}


@dataclass(frozen=True, eq=False)
class TabulatedKernel(Kernel):
    """Piecewise-linear kernel through (grid, values); constant past the last node."""

    grid: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))
    values: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0]))
    lipschitz: Optional[float] = None
    kind = "tabulated"

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if g.ndim != 1 or g.shape != v.shape or g.size < 2:
            raise KernelError("tabulated kernel needs matching 1-D grid/values with >= 2 nodes")
        if g[0] != 0.0:
            raise KernelError("tabulated grid must start at r = 0")
        if np.any(np.diff(g) <= 0):
            raise KernelError("tabulated grid must be strictly increasing")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise KernelError("tabulated values must be finite and strictly positive")
        if np.any(np.diff(v) > 0):
            raise KernelError("tabulated kernel must be non-increasing")
        slopes = np.abs(np.diff(v) / np.diff(g))
        lip = float(slopes.max())
        if self.lipschitz is not None and lip > self.lipschitz * (1 + 1e-12):
            raise KernelError(f"observed Lipschitz constant {lip} exceeds declared {self.lipschitz}")
        g.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if self.lipschitz is None:
            object.__setattr__(self, "lipschitz", lip)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.interp(r, self.grid, self.values)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self) -> np.ndarray:
        return self.grid

    def to_dict(self) -> dict:
        return {
            "kind": "tabulated",
            "grid": self.grid.tolist(),
            "values": self.values.tolist(),
            "lipschitz": self.lipschitz,
        }


def kernel_from_dict(spec: dict) -> Kernel:
    kind = spec.get("kind")
    if kind == "constant":
        return ConstantKernel(float(spec.get("value", 1.0)))
    if kind == "power_law":
        return PowerLawKernel(float(spec["K"]), float(spec["sigma"]), float(spec["beta"]))
    if kind == "tabulated":
        lip = spec.get("lipschitz")
        return TabulatedKernel(
            np.asarray(spec["grid"], dtype=float),
            np.asarray(spec["values"], dtype=float),
            None if lip is None else float(lip),
        )
    raise KernelError(f"unknown kernel kind {kind!r}")


def eval_kernel(k: Kernel, r) -> float:
    if np.any(np.asarray(r) < 0):
        raise KernelError("kernel evaluated at a negative radius")
    return k(r)


@dataclass(frozen=True)
class HypothesisKReport:
    holds: bool
    beta_in_range: bool
    first_violation: Optional[float]
    min_margin: float
    K: float
    sigma: float
    beta: float
    r_max: float
    n_grid: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_hypothesis_k(
    k: Kernel, K: float, sigma: float, beta: float, r_max: float, n_grid: int = 2001
) -> HypothesisKReport:
    """Check phi(r) >= K / (sigma + r)**beta on a uniform grid of [0, r_max].

    beta must lie in the open interval (0, 1/2). Violations are report content.
    """
    if not r_max > 0:
        raise ValueError("r_max must be positive")
    r = np.linspace(0.0, r_max, int(n_grid))
    lower = K * (sigma + r) ** (-beta)
    margin = np.asarray(k(r)) - lower
    # Relative slack for the equality case.
    bad = margin < -1e-12 * np.maximum(lower, 1.0)
    first = float(r[np.argmax(bad)]) if bad.any() else None
    beta_ok = 0.0 < beta < 0.5
    return HypothesisKReport(
        holds=bool(beta_ok and not bad.any()),
        beta_in_range=beta_ok,
        first_violation=first,
        min_margin=float(margin.min()),
        K=K,
        sigma=sigma,
        beta=beta,
        r_max=r_max,
        n_grid=int(n_grid),
    )


@dataclass(frozen=True)
class RescaledKernel:
    """phi_tau(r) = phi(2 sqrt(N) (r + tau V(0))) with primitive anchored at X(0)."""

    base: Kernel
    n_agents: int
    tau: float
    v0: float
    x0_dev: float

    def __post_init__(self):
        if self.n_agents < 2:
            raise ValueError("n_agents must be >= 2")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.v0 < 0 or self.x0_dev < 0:
            raise ValueError("V(0) and X(0) must be non-negative")

    @property
    def scale(self) -> float:
        return 2.0 * math.sqrt(self.n_agents)

    def _arg(self, r):
        return self.scale * (np.asarray(r, dtype=float) + self.tau * self.v0)

    def __call__(self, r):
        return self.base(self._arg(r))

    def primitive(self, X: float) -> float:
        """Integral of phi_tau from X(0) to X."""
        if X < 0:
            raise ValueError("primitive is defined for X >= 0")
        X0 = self.x0_dev
        b = self.base
        if isinstance(b, ConstantKernel):
            return b.value * (X - X0)
        if isinstance(b, PowerLawKernel):
            a, s, p = self.scale, b.sigma, 1.0 - b.beta
            u = (s + a * (X + self.tau * self.v0)) ** p
            u0 = (s + a * (X0 + self.tau * self.v0)) ** p
            return b.K / (a * p) * (u - u0)
        return self._quad_primitive(X)

    def _quad_primitive(self, X: float) -> float:
        X0 = self.x0_dev
        lo, hi = sorted((X0, X))
        # Kinks of phi_tau sit at preimages of the base kernel's kinks.
        kinks = self.base.breakpoints() / self.scale - self.tau * self.v0
        kinks = kinks[(kinks > lo) & (kinks < hi)]
        edges = np.concatenate([[lo], kinks, [hi]])
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(self.__call__, a, b, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
            total += val
        return total if X >= X0 else -total

    def inverse_primitive(self, y: float) -> float:
        """The X >= X(0) with primitive(X) = y."""
        if y < 0:
            raise ValueError("inverse primitive is defined for y >= 0")
        X0 = self.x0_dev
        if y == 0:
            return X0
        b = self.base
        if isinstance(b, ConstantKernel):
            return X0 + y / b.value
        if isinstance(b, PowerLawKernel):
            a, s, p = self.scale, b.sigma, 1.0 - b.beta
            u0 = (s + a * (X0 + self.tau * self.v0)) ** p
            return ((y * a * p / b.K + u0) ** (1.0 / p) - s) / a - self.tau * self.v0
        # Bracket by doubling, then Brent on the monotone primitive.
        hi = X0 + max(1.0, y / float(self(X0)))
        while self.primitive(hi) < y:
            hi = X0 + 2.0 * (hi - X0)
        return optimize.brentq(lambda X: self.primitive(X) - y, X0, hi, xtol=BISECT_XTOL, rtol=1e-15)


def critical_radius(
    rk: RescaledKernel,
    eps0: float,
    c: float,
    tau: float,
    mu: float,
    alpha1: float,
    beta1: float,
    v0: float,
) -> float:
    """X_M(eps0): inverse primitive of 2 sqrt((1+c^2) tau) (alpha1 + beta1 eps0) V(0) / (mu eps0)."""
    if not (eps0 > 0 and tau > 0 and 0 < mu <= 1):
        raise ValueError("critical_radius needs eps0 > 0, tau > 0 and mu in (0, 1]")
    arg = 2.0 * math.sqrt((1.0 + c * c) * tau) * (alpha1 + beta1 * eps0) / (mu * eps0) * v0
    return rk.inverse_primitive(arg)
