"""Finite MDPs, simulation and exact policy evaluation.

State-action pairs are flattened: pair ``k = offsets[s] + a``.  Every
per-pair array (transitions, rewards, features, policy probabilities)
uses this layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

PROB_TOL = 1e-12
BELLMAN_TOL = 1e-10
TRUNCATION_BIAS = 1e-6


def pair_offsets(n_actions: np.ndarray) -> np.ndarray:
    """Start index of each state's block in the flattened pair layout."""
    return np.concatenate(([0], np.cumsum(n_actions)[:-1])).astype(np.int64)


def pair_states(n_actions: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(n_actions)), n_actions)


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Tabular MDP with finite-support reward distributions.

    ``reward_values`` and ``reward_probs`` are ``(n_pairs, K)`` arrays; rows
    with fewer than ``K`` support points are padded with zero probability.
    """

    n_actions: np.ndarray
    transition: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    gamma: float
    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n_actions = np.asarray(self.n_actions, dtype=np.int64)
        object.__setattr__(self, "n_actions", n_actions)
        object.__setattr__(self, "offsets", pair_offsets(n_actions))
        for name in ("transition", "reward_values", "reward_probs"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", float(self.gamma))
        n_pairs = int(n_actions.sum())
        if self.transition.shape != (n_pairs, len(n_actions)):
            raise ValueError(
                f"transition must have shape ({n_pairs}, {len(n_actions)}), "
                f"got {self.transition.shape}")
        if self.reward_values.shape != self.reward_probs.shape \
                or self.reward_values.shape[0] != n_pairs:
            raise ValueError("reward_values and reward_probs must both be (n_pairs, K)")

    @property
    def n_states(self) -> int:
        return len(self.n_actions)

    @property
    def n_pairs(self) -> int:
        return int(self.n_actions.sum())

    def pair(self, s: int, a: int) -> int:
        if not 0 <= s < self.n_states:
            raise IndexError(f"state {s} out of range [0, {self.n_states})")
        if not 0 <= a < self.n_actions[s]:
            raise IndexError(f"action {a} out of range for state {s} "
                             f"(has {self.n_actions[s]} actions)")
        return int(self.offsets[s] + a)

    def expected_reward(self) -> np.ndarray:
        """Mean reward per pair."""
        return np.sum(self.reward_values * self.reward_probs, axis=1)

    @classmethod
    def deterministic(cls, next_state, reward, gamma, n_actions=None) -> "FiniteMdp":
        """MDP with point-mass transitions and rewards, one entry per pair."""
        next_state = np.asarray(next_state, dtype=np.int64)
        reward = np.asarray(reward, dtype=float)
        n_pairs = len(next_state)
        if n_actions is None:
            n_actions = np.ones(n_pairs, dtype=np.int64)
        n_states = len(n_actions)
        P = np.zeros((n_pairs, n_states))
        P[np.arange(n_pairs), next_state] = 1.0
        return cls(n_actions, P, reward[:, None], np.ones((n_pairs, 1)), gamma)


@dataclass(frozen=True, eq=False)
class Policy:
    """Action distribution per state, flattened in pair layout."""

    n_actions: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_actions", np.asarray(self.n_actions, dtype=np.int64))
        probs = np.array(self.probs, dtype=float)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        if probs.shape != (int(self.n_actions.sum()),):
            raise ValueError("policy probs must have one entry per state-action pair")

    @classmethod
    def uniform(cls, n_actions) -> "Policy":
        n_actions = np.asarray(n_actions, dtype=np.int64)
        return cls(n_actions, 1.0 / np.repeat(n_actions, n_actions))

    def action_dist(self, s: int) -> np.ndarray:
        start = int(np.sum(self.n_actions[:s]))
        return self.probs[start:start + self.n_actions[s]]

    def state_pair_matrix(self) -> np.ndarray:
        """(n_states, n_pairs) matrix ``W`` with ``W[s, k] = pi(a|s)`` for pair k of s."""
        n_states = len(self.n_actions)
        W = np.zeros((n_states, len(self.probs)))
        W[pair_states(self.n_actions), np.arange(len(self.probs))] = self.probs
        return W

    def violations(self) -> list[str]:
        out = []
        if np.any(self.probs < 0):
            out.append("policy has negative probabilities")
        sums = np.add.reduceat(self.probs, pair_offsets(self.n_actions))
        for s in np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL):
            out.append(f"policy at state {s}: probabilities sum to {sums[s]!r}")
        return out


@dataclass(frozen=True, eq=False)
class ValueTable:
    v: np.ndarray
    q: np.ndarray


def validate(mdp: FiniteMdp) -> list[str]:
    """Return a list of invariant violations; empty means the MDP is valid."""
    problems = []
    if not 0.0 < mdp.gamma < 1.0:
        problems.append(f"gamma={mdp.gamma!r} not strictly inside (0,1)")
    states = pair_states(mdp.n_actions)
    actions = np.arange(mdp.n_pairs) - mdp.offsets[states]
    if np.any(mdp.n_actions < 1):
        problems.append("every state needs at least one action")
    for k in range(mdp.n_pairs):
        where = f"(s={states[k]}, a={actions[k]})"
        row = mdp.transition[k]
        if np.any(row < 0):
            problems.append(f"{where}: negative transition probability")
        if abs(row.sum() - 1.0) > PROB_TOL:
            problems.append(f"{where}: transition row sums to {row.sum()!r}, not 1")
        probs = mdp.reward_probs[k]
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROB_TOL:
            problems.append(f"{where}: reward probabilities invalid (sum {probs.sum()!r})")
        support = mdp.reward_values[k][probs > 0]
        if np.any(np.abs(support) > 1.0):
            problems.append(f"{where}: reward outside [-1,1]")
    return problems


def bellman_residual(mdp: FiniteMdp, policy: Policy, values: ValueTable) -> float:
    q_target = mdp.expected_reward() + mdp.gamma * mdp.transition @ values.v
    v_target = policy.state_pair_matrix() @ values.q
    return float(max(np.max(np.abs(values.q - q_target)),
                     np.max(np.abs(values.v - v_target))))


def exact_values(mdp: FiniteMdp, policy: Policy) -> ValueTable:
    """Solve ``(I - gamma P^pi) v = r^pi`` densely and recover ``q``."""
    W = policy.state_pair_matrix()
    r = mdp.expected_reward()
    P_pi = W @ mdp.transition
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi
    v = scipy.linalg.solve(A, W @ r)
    q = r + mdp.gamma * mdp.transition @ v
    values = ValueTable(v, q)
    residual = bellman_residual(mdp, policy, values)
    if not residual <= BELLMAN_TOL:
        raise ArithmeticError(
            f"Bellman residual {residual:.3e} exceeds {BELLMAN_TOL}; check MDP/policy validity")
    return values


def _inverse_cdf(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Row-wise categorical draw; ``probs`` is (n, K), ``u`` is (n,)."""
    cdf = np.cumsum(probs, axis=1)
    idx = np.sum(cdf <= u[:, None] * cdf[:, -1:], axis=1)
    # zero-probability trailing entries must never be selected
    last_pos = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last_pos)


def step_pairs(mdp: FiniteMdp, pairs: np.ndarray, u_reward: np.ndarray,
               u_next: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised transition given uniforms in [0,1); returns (rewards, next states)."""
    k = _inverse_cdf(mdp.reward_probs[pairs], u_reward)
    r = mdp.reward_values[pairs, k]
    s_next = _inverse_cdf(mdp.transition[pairs], u_next)
    return r, s_next


def step(mdp: FiniteMdp, s: int, a: int, rng: np.random.Generator) -> tuple[float, int]:
    k = mdp.pair(s, a)
    u = rng.random(2)
    r, s_next = step_pairs(mdp, np.array([k]), u[:1], u[1:])
    return float(r[0]), int(s_next[0])


def truncation_horizon(gamma: float, bias: float = TRUNCATION_BIAS) -> int:
    """Steps after which the discounted tail is below ``bias`` for rewards in [-1,1]."""
    return int(np.ceil(np.log(bias * (1 - gamma)) / np.log(gamma)))


def monte_carlo_returns(mdp: FiniteMdp, policy: Policy, s0: int, n_rollouts: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Truncated discounted returns of ``n_rollouts`` independent rollouts from ``s0``."""
    horizon = truncation_horizon(mdp.gamma)
    states = np.full(n_rollouts, s0, dtype=np.int64)
    returns = np.zeros(n_rollouts)
    discount = 1.0
    for _ in range(horizon):
        offsets = mdp.offsets[states]
        pi_rows = np.zeros((n_rollouts, int(mdp.n_actions.max())))
        for s in np.unique(states):
            mask = states == s
            pi_rows[mask, :mdp.n_actions[s]] = policy.action_dist(s)
        actions = _inverse_cdf(pi_rows, rng.random(n_rollouts))
        r, states = step_pairs(mdp, offsets + actions, rng.random(n_rollouts),
                               rng.random(n_rollouts))
        returns += discount * r
        discount *= mdp.gamma
    return returns


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator,
               reward_scale: float = 1.0, concentration: float = 1.0) -> FiniteMdp:
    """Random tabular MDP: Dirichlet transitions, {-1,+1} Bernoulli rewards.

    Mean rewards are uniform on ``[-reward_scale, reward_scale]``.
    """
    n_pairs = n_states * n_actions
    P = rng.dirichlet(np.full(n_states, concentration), size=n_pairs)
    means = rng.uniform(-reward_scale, reward_scale, size=n_pairs)
    values = np.tile([-1.0, 1.0], (n_pairs, 1))
    probs = np.column_stack([(1 - means) / 2, (1 + means) / 2])
    return FiniteMdp(np.full(n_states, n_actions), P, values, probs, gamma)


def random_policy(n_actions, rng: np.random.Generator) -> Policy:
    n_actions = np.asarray(n_actions, dtype=np.int64)
    probs = np.concatenate([rng.dirichlet(np.ones(k)) for k in n_actions])
    return Policy(n_actions, probs)
