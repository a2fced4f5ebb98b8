"""Reproducible i.i.d. offline datasets ``(s, a, r, s_next)`` with ``(s, a) ~ mu``.

Record ``i`` of a dataset with seed ``seed`` is generated from the Philox
counter block ``i`` under key ``seed``: four uniforms per block, used for
the pair draw, the reward draw and the next-state draw (the fourth is
unused).  A record therefore depends only on ``(seed, i)``, so any slice of
the dataset can be generated independently and in any order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMdp, pair_offsets, pair_states, step_pairs

UNIFORMS_PER_RECORD = 4
SEED_MASK = (1 << 64) - 1


def record_uniforms(seed: int, start: int, count: int) -> np.ndarray:
    """Uniforms for records ``start .. start+count-1`` as a ``(count, 4)`` array."""
    bitgen = np.random.Philox(key=int(seed) & SEED_MASK)
    if start:
        bitgen.advance(start)
    return np.random.Generator(bitgen).random(UNIFORMS_PER_RECORD * count).reshape(
        count, UNIFORMS_PER_RECORD)


def instance_hash(mdp: FiniteMdp, mu=None) -> str:
    h = hashlib.sha256()
    h.update(np.float64(mdp.gamma).tobytes())
    for arr in (mdp.n_actions.astype(np.int64), mdp.transition, mdp.reward_values,
                mdp.reward_probs):
        h.update(np.ascontiguousarray(arr).tobytes())
    if mu is not None:
        h.update(np.ascontiguousarray(np.asarray(mu, dtype=float)).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class OfflineDataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    seed: int
    source: str = ""

    @property
    def n(self) -> int:
        return len(self.states)

    def __len__(self):
        return self.n

    def records(self):
        return list(zip(self.states.tolist(), self.actions.tolist(),
                        self.rewards.tolist(), self.next_states.tolist()))

    def pairs(self, n_actions) -> np.ndarray:
        return pair_offsets(np.asarray(n_actions))[self.states] + self.actions

    def __eq__(self, other):
        if not isinstance(other, OfflineDataset):
            return NotImplemented
        return (self.seed == other.seed and self.source == other.source
                and all(np.array_equal(a, b) for a, b in (
                    (self.states, other.states), (self.actions, other.actions),
                    (self.rewards, other.rewards), (self.next_states, other.next_states))))

    def concat(self, other: "OfflineDataset") -> "OfflineDataset":
        return OfflineDataset(
            np.concatenate([self.states, other.states]),
            np.concatenate([self.actions, other.actions]),
            np.concatenate([self.rewards, other.rewards]),
            np.concatenate([self.next_states, other.next_states]),
            self.seed, self.source)


def categorical(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from one categorical distribution; same rule as the row-wise
    sampler in :mod:`ope_lab.mdp`."""
    cdf = np.cumsum(weights)
    idx = np.searchsorted(cdf, u * cdf[-1], side="right")
    return np.minimum(idx, np.flatnonzero(weights > 0)[-1])


def sample_records(mdp: FiniteMdp, mu, seed: int, start: int, count: int):
    """Pairs, rewards and next states for records ``start .. start+count-1``."""
    mu = np.asarray(mu, dtype=float)
    u = record_uniforms(seed, start, count)
    pairs = categorical(mu, u[:, 0])
    rewards, next_states = step_pairs(mdp, pairs, u[:, 1], u[:, 2])
    return pairs, rewards, next_states


def sample_dataset(mdp: FiniteMdp, mu, n: int, seed: int,
                   chunk_size: int = 1 << 16) -> OfflineDataset:
    if n < 0:
        raise ValueError(f"n={n} must be nonnegative")
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (mdp.n_pairs,):
        raise ValueError("mu must have one weight per state-action pair")
    parts = [sample_records(mdp, mu, seed, start, min(chunk_size, n - start))
             for start in range(0, n, chunk_size)]
    if parts:
        pairs, rewards, next_states = (np.concatenate(x) for x in zip(*parts))
    else:
        pairs = next_states = np.zeros(0, dtype=np.int64)
        rewards = np.zeros(0)
    states = pair_states(mdp.n_actions)[pairs]
    actions = pairs - mdp.offsets[states]
    return OfflineDataset(states, actions, rewards, next_states.astype(np.int64), seed,
                          instance_hash(mdp, mu))


def empirical_mu(ds: OfflineDataset, n_actions) -> np.ndarray:
    """Relative frequency of each state-action pair in the dataset."""
    if ds.n == 0:
        raise ValueError("empirical_mu needs a nonempty dataset")
    n_actions = np.asarray(n_actions, dtype=np.int64)
    counts = np.bincount(ds.pairs(n_actions), minlength=int(n_actions.sum()))
    return counts / ds.n


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def derive_seed(master: int, *index: int) -> int:
    """Child seed for cell ``index`` of a sweep with master seed ``master``."""
    ss = np.random.SeedSequence([int(master) & SEED_MASK, *(int(i) for i in index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
