"""Least-squares policy evaluation with a ridge-regularised feature Gram matrix.

The iteration regresses ``r + gamma * V_{t-1}(s_next)`` onto the features,
starting from ``V_0 = 0``.  The Gram matrix is factorised once per run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .features import FeatureSystem, tilde_phi_table
from .mdp import Policy, ValueTable
from .sampling import OfflineDataset

C1 = 4 * math.sqrt(2)
C2 = 12.0
DEFAULT_T = 100
EIG_TOL = 1e-10


def _check_delta(delta: float):
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta={delta} must lie in (0, 1)")


def _check_eta(eta: float):
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta={eta} must lie in (0, 1]")


def regularization_lambda(n: int, d: int, delta: float, eta: float) -> float:
    """Ridge ``(C1/eta) * sqrt(n * ln(6d/delta))``."""
    _check_delta(delta)
    _check_eta(eta)
    if n < 0 or d < 1:
        raise ValueError("need n >= 0 and d >= 1")
    return (C1 / eta) * math.sqrt(n * math.log(6 * d / delta))


def default_iterations(eps: float, beta: float | None) -> int:
    if beta is None or not 0.0 < beta < 1.0:
        return DEFAULT_T
    return max(1, math.ceil(math.log(1 / eps) / math.log(1 / beta)))


@dataclass(frozen=True)
class LspeConfig:
    lam: float
    T: int = DEFAULT_T
    eta: float = 0.5
    delta: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda={self.lam} must be >= 0")
        if self.T < 1:
            raise ValueError(f"T={self.T} must be >= 1")
        _check_eta(self.eta)
        _check_delta(self.delta)

    @classmethod
    def scheduled(cls, n: int, d: int, T: int = DEFAULT_T, eta: float = 0.5,
                  delta: float = 0.1) -> "LspeConfig":
        return cls(regularization_lambda(n, d, delta, eta), T, eta, delta)


@dataclass(frozen=True, eq=False)
class LspeRun:
    theta_trace: np.ndarray      # (T+1, d), row 0 is zero
    lambda_hat: np.ndarray
    target_trace: np.ndarray     # V_t(target) for t = 0..T
    target_state: int
    tilde_phi: np.ndarray = field(repr=False)

    @property
    def theta(self) -> np.ndarray:
        return self.theta_trace[-1]

    @property
    def estimate(self) -> float:
        return float(self.target_trace[-1])

    def values(self, t: int = -1) -> np.ndarray:
        """``V_t`` over all states."""
        return self.tilde_phi @ self.theta_trace[t]


def _design(ds: OfflineDataset, fs: FeatureSystem, policy: Policy):
    tphi = tilde_phi_table(fs, policy)
    Phi = fs.phi[ds.pairs(fs.n_actions)]
    PhiBar = tphi[ds.next_states]
    return Phi, PhiBar, tphi


def _factor(Phi: np.ndarray, lam: float):
    gram = Phi.T @ Phi + lam * np.eye(Phi.shape[1])
    gram = (gram + gram.T) / 2
    try:
        return gram, scipy.linalg.cho_factor(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "regularised Gram matrix is singular; use lambda > 0") from exc


def run_lspe(ds: OfflineDataset, fs: FeatureSystem, policy: Policy, gamma: float,
             cfg: LspeConfig, target_state: int) -> LspeRun:
    Phi, PhiBar, tphi = _design(ds, fs, policy)
    gram, chol = _factor(Phi, cfg.lam)
    b = Phi.T @ ds.rewards
    M = gamma * (Phi.T @ PhiBar)
    thetas = np.zeros((cfg.T + 1, fs.dim))
    for t in range(1, cfg.T + 1):
        thetas[t] = scipy.linalg.cho_solve(chol, b + M @ thetas[t - 1])
    return LspeRun(thetas, gram, thetas @ tphi[target_state], target_state, tphi)


@dataclass(frozen=True, eq=False)
class LspeDecomposition:
    xi: np.ndarray
    Phi: np.ndarray
    PhiBar: np.ndarray
    B: np.ndarray
    v: np.ndarray
    delta_trace: np.ndarray      # Delta_0..Delta_T from the recursion
    delta_closed: np.ndarray     # closed-form Delta_T
    squared_error: float         # (V(s0) - V_T(s0))^2 from the run
    squared_error_quadratic: float  # ||Delta_T||^2 in the target covariance

    @property
    def recursion_gap(self) -> float:
        a, b = self.delta_trace[-1], self.delta_closed
        return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), np.finfo(float).tiny))

    @property
    def quadratic_gap(self) -> float:
        a, b = self.squared_error, self.squared_error_quadratic
        return abs(a - b) / max(abs(b), np.finfo(float).tiny)


def decompose(ds: OfflineDataset, fs: FeatureSystem, policy: Policy, gamma: float,
              cfg: LspeConfig, theta_star, exact: ValueTable,
              target_state: int) -> LspeDecomposition:
    """Noise/contraction split of the iteration error against known ground truth.

    With ``Delta_t = theta_t - theta_star``, ``Delta_{t+1} = v + B Delta_t``,
    hence ``Delta_T = sum_{i<T} B^i v - B^T theta_star``.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    Phi, PhiBar, tphi = _design(ds, fs, policy)
    _, chol = _factor(Phi, cfg.lam)
    pairs = ds.pairs(fs.n_actions)
    xi = ds.rewards + gamma * exact.v[ds.next_states] - exact.q[pairs]
    B = scipy.linalg.cho_solve(chol, gamma * (Phi.T @ PhiBar))
    v = scipy.linalg.cho_solve(chol, Phi.T @ xi - cfg.lam * theta_star)

    deltas = np.empty((cfg.T + 1, fs.dim))
    deltas[0] = -theta_star
    for t in range(cfg.T):
        deltas[t + 1] = v + B @ deltas[t]

    acc = np.zeros(fs.dim)
    power = np.eye(fs.dim)
    for _ in range(cfg.T):
        acc += power @ v
        power = power @ B
    closed = acc - power @ theta_star

    run = run_lspe(ds, fs, policy, gamma, cfg, target_state)
    sq = (exact.v[target_state] - run.estimate) ** 2
    t0 = tphi[target_state]
    quad = float(closed @ np.outer(t0, t0) @ closed)
    return LspeDecomposition(xi, Phi, PhiBar, B, v, deltas, closed, float(sq), quad)


@dataclass(frozen=True)
class ShiftConstants:
    c: float
    c0: float
    beta: float
    gamma: float
    eta: float

    @property
    def assumption_holds(self) -> bool:
        """``C < 1/gamma^2`` (low distribution shift)."""
        return self.c < 1 / self.gamma**2

    @property
    def bound_applicable(self) -> bool:
        """``C < 1/gamma^2 - eta``, i.e. ``beta < 1``."""
        return self.c < 1 / self.gamma**2 - self.eta


def _inv_sqrt(mat: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh((mat + mat.T) / 2)
    if w[0] <= EIG_TOL * max(1.0, w[-1]):
        raise np.linalg.LinAlgError(
            f"feature covariance is singular (lambda_min={w[0]:.3e}); shift is unverifiable")
    return (U / np.sqrt(w)) @ U.T


def relative_lambda_max(lam: np.ndarray, other: np.ndarray) -> float:
    """Smallest ``C`` with ``other <= C * lam`` in the Loewner order."""
    R = _inv_sqrt(lam)
    X = R @ other @ R
    return float(max(np.linalg.eigvalsh((X + X.T) / 2)[-1], 0.0))


def shift_constants(lambda_mat, lambda_bar, lambda_bar0, eta: float,
                    gamma: float) -> ShiftConstants:
    c = relative_lambda_max(lambda_mat, lambda_bar)
    c0 = relative_lambda_max(lambda_mat, lambda_bar0)
    return ShiftConstants(c, c0, gamma * math.sqrt(c + eta), gamma, eta)


def theorem2_bound(c: float, c0: float, eta: float, gamma: float, d: int, delta: float,
                   n: int, t_iters: int, theta_norm: float) -> float:
    """High-probability bound on ``(V(s0) - V_T(s0))^2`` (natural logarithms)."""
    _check_delta(delta)
    beta = gamma * math.sqrt(c + eta)
    if beta >= 1:
        raise ValueError(f"beta={beta:.6g} >= 1: the bound does not apply")
    if n < 1:
        raise ValueError("n must be >= 1")
    contraction = beta ** (2 * t_iters)
    stat = 2 * C2 * (d + math.log(3 / delta)) / (n * (1 - beta) ** 2)
    first = 2 * c0 / (1 - gamma) ** 2 * (stat + contraction)
    second = (2 * c0 * C1 / eta) * math.sqrt(math.log(6 * d / delta) / n) \
        * theta_norm**2 * (2 / (1 - beta) ** 2 + contraction)
    return first + second


def required_samples(eps: float, theta_norm: float, d: int, delta: float) -> float:
    """Sample size ``max(|theta|^4/eps^4 ln(d/delta), (d + ln(1/delta))/eps^2)``, unit constants."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    _check_delta(delta)
    return max(theta_norm**4 / eps**4 * math.log(d / delta),
               (d + math.log(1 / delta)) / eps**2)
