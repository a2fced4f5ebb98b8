"""Exact and simulated difficulty of telling the two hard-instance hypotheses apart.

Only the level-0 group-B rewards depend on ``r0``; they are ``+-1`` with
``P(+1) = 1/2`` under ``r0 = 0`` and ``P(+1) = p1 > 1/2`` otherwise.  The
count of ``+1`` rewards is sufficient, so the equal-prior Bayes error of the
best test is ``1/2 * sum_k min(Bin(n0, 1/2)(k), Bin(n0, p1)(k))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .hard_instance import HardInstanceSpec, build
from .sampling import derive_seed, sample_dataset

UNREACHABLE = math.inf
# +-40 standard deviations around each hypothesis mean; mass outside is < 1e-300
WINDOW_SIGMAS = 40.0


@dataclass(frozen=True)
class DistinguishTask:
    gamma: float
    m: int
    L: int
    q: float = 1.0
    eps: float = 0.1

    @property
    def spec0(self) -> HardInstanceSpec:
        return HardInstanceSpec(self.gamma, self.m, self.L, self.q, self.eps, r0_is_zero=True)

    @property
    def spec1(self) -> HardInstanceSpec:
        return HardInstanceSpec(self.gamma, self.m, self.L, self.q, self.eps, r0_is_zero=False)

    @property
    def p1(self) -> float:
        return self.spec1.bernoulli_p_plus

    @property
    def informative_mass(self) -> float:
        return self.spec1.p / self.L

    def informative_count(self, n: int) -> int:
        return int(round(n * self.informative_mass))


def _log_binom_pmf(n: int, k: np.ndarray, p: float) -> np.ndarray:
    log_comb = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
    return log_comb + k * math.log(p) + (n - k) * math.log1p(-p)


def _support_window(n0: int, p1: float) -> np.ndarray:
    half_width = WINDOW_SIGMAS * math.sqrt(n0) / 2
    lo = max(0, math.floor(n0 / 2 - half_width))
    hi = min(n0, math.ceil(n0 * p1 + half_width))
    return np.arange(lo, hi + 1, dtype=float)


def bayes_error(p1: float, n0: int) -> float:
    if n0 < 0:
        raise ValueError("n0 must be nonnegative")
    if n0 == 0:
        return 0.5
    k = _support_window(n0, p1)
    lp0 = _log_binom_pmf(n0, k, 0.5)
    lp1 = _log_binom_pmf(n0, k, p1)
    return 0.5 * float(np.sum(np.exp(np.minimum(lp0, lp1))))


def exact_bayes_error(task: DistinguishTask, n0: int) -> float:
    """Bayes error of the best test given ``n0`` informative reward observations."""
    return bayes_error(task.p1, n0)


def exact_bayes_error_random_split(task: DistinguishTask, n: int) -> float:
    """Bayes error when the ``n0`` informative samples are ``Binomial(n, p/L)``."""
    w = task.informative_mass
    if n == 0 or w == 0:
        return 0.5
    sd = math.sqrt(n * w * (1 - w))
    lo = max(0, math.floor(n * w - WINDOW_SIGMAS * sd))
    hi = min(n, math.ceil(n * w + WINDOW_SIGMAS * sd))
    counts = np.arange(lo, hi + 1)
    weights = np.exp(_log_binom_pmf(n, counts.astype(float), w)) if w < 1 else \
        (counts == n).astype(float)
    return float(sum(wt * bayes_error(task.p1, int(c)) for c, wt in zip(counts, weights)
                     if wt > 1e-300))


def required_n_for_error(task: DistinguishTask, target_error: float) -> float:
    """Smallest dataset size ``N`` with Bayes error at ``round(N p/L)`` informative
    samples at most ``target_error``; :data:`UNREACHABLE` when ``p = 0``."""
    if not 0.0 < target_error <= 0.5:
        raise ValueError(f"target_error={target_error} must lie in (0, 0.5]")

    def ok(n: int) -> bool:
        return exact_bayes_error(task, task.informative_count(n)) <= target_error

    if ok(0):
        return 0
    if task.informative_mass == 0:
        return UNREACHABLE
    hi = 1
    while not ok(hi):
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class GrowthRow:
    L: int
    d: int
    n_star: float
    ratio: float
    predicted_ratio: float


def growth_ratio_sweep(gamma: float, m: int, q: float, eps: float, target_error: float,
                       L_range) -> list[GrowthRow]:
    """``N*`` per depth and the ratio ``N*(L+1)/N*(L)`` against ``((L+1)/L) m gamma^2``.

    The last row has no successor, so its ratios are NaN.
    """
    Ls = list(L_range)
    if any(b <= a for a, b in zip(Ls, Ls[1:])):
        raise ValueError("L_range must be increasing")
    n_star = [required_n_for_error(DistinguishTask(gamma, m, L, q, eps), target_error)
              for L in Ls]
    rows = []
    for j, L in enumerate(Ls):
        if j + 1 < len(Ls):
            L_next = Ls[j + 1]
            ratio = n_star[j + 1] / n_star[j] if n_star[j] else math.nan
            predicted = (L_next / L) * (m * gamma**2) ** (L_next - L)
        else:
            ratio = predicted = math.nan
        rows.append(GrowthRow(L, m * L, n_star[j], ratio, predicted))
    return rows


def likelihood_ratio_decision(p1: float, n0: int, k: int) -> bool:
    """True if ``Bin(n0, p1)`` is strictly more likely than ``Bin(n0, 1/2)`` at ``k``."""
    return k * math.log(2 * p1) + (n0 - k) * math.log(2 * (1 - p1)) > 0


@dataclass(frozen=True)
class TrialResult:
    correct: bool
    estimate: float
    truth_is_zero: bool
    n0: int


def monte_carlo_trial(task: DistinguishTask, n: int, seed: int) -> TrialResult:
    """Simulate one dataset from a fairly chosen hypothesis and apply the best test."""
    rng = np.random.default_rng(seed)
    truth_is_zero = bool(rng.integers(2))
    spec = task.spec0 if truth_is_zero else task.spec1
    bundle = build(spec)
    ds = sample_dataset(bundle.mdp, bundle.mu, n, int(rng.integers(2**63)))
    mask = np.isin(ds.states, bundle.informative_states)
    n0 = int(mask.sum())
    k = int(np.sum(ds.rewards[mask] > 0))
    says_nonzero = likelihood_ratio_decision(task.p1, n0, k)
    estimate = 2 * task.eps if says_nonzero else 0.0
    return TrialResult(says_nonzero != truth_is_zero, estimate, truth_is_zero, n0)


@dataclass(frozen=True)
class ErrorRateRow:
    n: int
    empirical_error: float
    exact_error: float
    se: float


def monte_carlo_error_rate(task: DistinguishTask, n: int, trials: int,
                           seed: int) -> ErrorRateRow:
    wrong = sum(not monte_carlo_trial(task, n, derive_seed(seed, t)).correct
                for t in range(trials))
    exact = exact_bayes_error(task, task.informative_count(n))
    return ErrorRateRow(n, wrong / trials, exact, math.sqrt(exact * (1 - exact) / trials))
