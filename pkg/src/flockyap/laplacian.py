"""Weight matrices, graph Laplacians and their spectral quantities.

Laplacian matrices carry the 1/N prefactor of the dynamics (the NORMALIZED
convention). Spectral helpers accept a ``convention`` flag; UNNORMALIZED
multiplies the matrix by N first, which is the form used for textbook graph
spectra.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

import numpy as np

SYM_TOL = 1e-12
ROW_SUM_TOL = 1e-13
EIG_ZERO_REL = 1e-12


class Convention(str, Enum):
    NORMALIZED = "normalized"
    UNNORMALIZED = "unnormalized"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """Symmetric communication rates in [0, 1] with zero diagonal."""

    entries: np.ndarray

    def __post_init__(self):
        w = np.array(self.entries, dtype=float, copy=True)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"weight matrix must be square, got shape {w.shape}")
        if w.shape[0] < 2:
            raise ValueError("weight matrix needs at least 2 agents")
        if not np.all(np.isfinite(w)):
            raise ValueError("weight matrix has non-finite entries")
        if np.max(np.abs(w - w.T), initial=0.0) > SYM_TOL:
            raise ValueError("weight matrix is not symmetric")
        np.fill_diagonal(w, 0.0)
        if w.min() < 0.0 or w.max() > 1.0:
            raise ValueError("weights must lie in [0, 1]")
        w = 0.5 * (w + w.T)
        object.__setattr__(self, "entries", _readonly(w))

    @property
    def n_agents(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "WeightMatrix":
        return cls(np.zeros((n, n)))

    @classmethod
    def complete(cls, n: int, weight: float = 1.0) -> "WeightMatrix":
        return cls(weight * (np.ones((n, n)) - np.eye(n)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable) -> "WeightMatrix":
        """Edges as ``(i, j)`` or ``(i, j, w)``, 0-based."""
        w = np.zeros((n, n))
        for e in edges:
            i, j = int(e[0]), int(e[1])
            val = float(e[2]) if len(e) > 2 else 1.0
            w[i, j] = w[j, i] = val
        return cls(w)

    def __eq__(self, other):
        return isinstance(other, WeightMatrix) and np.array_equal(self.entries, other.entries)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LaplacianOperator:
    """Symmetric N x N matrix with zero row sums and non-positive off-diagonal.

    Acts on (R^d)^N blockwise, i.e. as ``matrix @ y`` for ``y`` of shape (N, d).
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float, copy=True)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"Laplacian must be square, got {m.shape}")
        scale = max(1.0, float(np.abs(m).max(initial=0.0)))
        if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * scale:
            raise ValueError("Laplacian is not symmetric")
        if np.max(np.abs(m.sum(axis=1)), initial=0.0) > ROW_SUM_TOL * scale * m.shape[0]:
            raise ValueError("Laplacian rows must sum to zero")
        off = m - np.diag(np.diag(m))
        if off.max(initial=0.0) > SYM_TOL * scale:
            raise ValueError("Laplacian off-diagonal entries must be <= 0")
        object.__setattr__(self, "matrix", _readonly(0.5 * (m + m.T)))

    @property
    def n_agents(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def zeros(cls, n: int) -> "LaplacianOperator":
        return cls(np.zeros((n, n)))


def _laplacian_matrix(eff: np.ndarray) -> np.ndarray:
    """Normalized Laplacian of a symmetric non-negative weight array (zero diagonal assumed)."""
    n = eff.shape[-1]
    m = -eff / n
    idx = np.arange(n)
    m[..., idx, idx] = eff.sum(axis=-1) / n
    return m


def laplacian_from_weights(w: Union[WeightMatrix, np.ndarray]) -> LaplacianOperator:
    """M_ij = -xi_ij / N (i != j), M_ii = (1/N) sum_j xi_ij."""
    if not isinstance(w, WeightMatrix):
        w = WeightMatrix(w)
    return LaplacianOperator(_laplacian_matrix(np.array(w.entries)))


def pair_distances(positions) -> np.ndarray:
    x = np.asarray(positions, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def effective_weights(w: WeightMatrix, positions, kernel) -> np.ndarray:
    """xi_ij * phi(|x_i - x_j|), zero on the diagonal."""
    eff = w.entries * np.asarray(kernel(pair_distances(positions)))
    np.fill_diagonal(eff, 0.0)
    return eff


def state_laplacian(w: WeightMatrix, positions, kernel) -> LaplacianOperator:
    return LaplacianOperator(_laplacian_matrix(effective_weights(w, positions, kernel)))


def apply(L: LaplacianOperator, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    squeeze = y.ndim == 1
    if squeeze:
        y = y[:, None]
    if y.shape[0] != L.n_agents:
        raise ValueError(f"operator is {L.n_agents}x{L.n_agents}, vector has {y.shape[0]} agents")
    out = L.matrix @ y
    return out[:, 0] if squeeze else out


def quadratic_form(L: LaplacianOperator, y) -> float:
    """B(L y, y)."""
    from .state import variance_form

    return variance_form(apply(L, y), y)


def _as_matrix(L) -> np.ndarray:
    m = L.matrix if isinstance(L, LaplacianOperator) else np.asarray(L, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.max(np.abs(m - m.T), initial=0.0) > SYM_TOL * scale:
        raise ValueError("matrix is not symmetric")
    return 0.5 * (m + m.T)


def _complement_basis(n: int) -> np.ndarray:
    """Orthonormal basis (n, n-1) of the mean-zero subspace."""
    ones = np.ones((n, 1)) / np.sqrt(n)
    q, _ = np.linalg.qr(np.hstack([ones, np.eye(n)[:, : n - 1]]))
    return q[:, 1:]


def restricted_spectrum(L, convention: Convention = Convention.NORMALIZED) -> np.ndarray:
    """Eigenvalues on the mean-zero subspace, ascending (the all-ones direction deflated)."""
    m = _as_matrix(L)
    n = m.shape[0]
    if Convention(convention) is Convention.UNNORMALIZED:
        m = n * m
    q = _complement_basis(n)
    return np.linalg.eigvalsh(q.T @ m @ q)


def spectrum(L, convention: Convention = Convention.NORMALIZED) -> np.ndarray:
    m = _as_matrix(L)
    if Convention(convention) is Convention.UNNORMALIZED:
        m = m.shape[0] * m
    return np.linalg.eigvalsh(m)


def _zero_tol(eigs: np.ndarray) -> float:
    top = float(np.abs(eigs).max(initial=0.0))
    return EIG_ZERO_REL * max(top, 1e-12)


def algebraic_connectivity(L, convention: Convention = Convention.NORMALIZED) -> float:
    """Second-smallest eigenvalue; 0 when the graph is disconnected."""
    eigs = restricted_spectrum(L, convention)
    lam2 = float(eigs[0])
    return 0.0 if lam2 <= _zero_tol(eigs) else lam2


def fiedler_vector(L, convention: Convention = Convention.NORMALIZED):
    """(lambda_2, unit eigenvector) computed on the mean-zero subspace."""
    m = _as_matrix(L)
    n = m.shape[0]
    if Convention(convention) is Convention.UNNORMALIZED:
        m = n * m
    q = _complement_basis(n)
    vals, vecs = np.linalg.eigh(q.T @ m @ q)
    return float(vals[0]), q @ vecs[:, 0]


def b_operator_norm(L) -> float:
    """Operator norm with respect to B: largest |eigenvalue| on the mean-zero subspace."""
    eigs = restricted_spectrum(L)
    return float(np.abs(eigs).max(initial=0.0))


def union_laplacian(L1: LaplacianOperator, L2: LaplacianOperator) -> LaplacianOperator:
    if L1.n_agents != L2.n_agents:
        raise ValueError("Laplacians act on different numbers of agents")
    return LaplacianOperator(L1.matrix + L2.matrix)


def window_average_laplacian(schedule, t: float, tau: float) -> LaplacianOperator:
    """(1/tau) * integral over [t, t + tau] of the schedule's Laplacian.

    Exact for piecewise-constant schedules: each constancy piece contributes its
    Laplacian weighted by overlap length.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    t1 = t + tau
    horizon = getattr(schedule, "horizon", None)
    if horizon is not None and t1 > horizon * (1 + 1e-12) + 1e-12:
        raise ValueError(f"window [{t}, {t1}] exceeds schedule horizon {horizon}")
    edges = [t, *schedule.breakpoints(t, t1), t1]
    acc = np.zeros((schedule.n_agents, schedule.n_agents))
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            acc += (b - a) * schedule.sample(a).entries
    return LaplacianOperator(_laplacian_matrix(acc / tau))
