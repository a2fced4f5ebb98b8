"""The three-group lower-bound MDP with linearly realizable values.

State ids are laid out as follows (levels ``l = 0..L-1``, slots ``i = 1..m``):

* group A (``s'_{l,i}``): ``(l * m + i - 1)``
* group B (``s_{l,i}``):  ``m*L + l * m + i - 1``
* group C (``s_{l,0}``):  ``2*m*L + l``

Feature coordinate ``e_{l,i}`` is index ``l * m + i - 1``.  Every state has a
single action, so pair ids coincide with state ids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureSystem
from .mdp import FiniteMdp, Policy

M_TOL = 1e-12


class InstanceParameterError(ValueError):
    pass


@dataclass(frozen=True)
class HardInstanceSpec:
    gamma: float
    m: int
    L: int
    q: float = 1.0
    eps: float = 0.1
    r0_is_zero: bool = False
    b: float | None = None

    def __post_init__(self):
        g = self.gamma
        if not 0.0 < g < 1.0:
            raise InstanceParameterError(f"gamma={g} violates 0 < gamma < 1")
        if int(self.m) != self.m or self.m < 1:
            raise InstanceParameterError(f"m={self.m} must be a positive integer")
        if int(self.L) != self.L or self.L < 1:
            raise InstanceParameterError(f"L={self.L} must be a positive integer")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "L", int(self.L))
        if self.m < 1.0 / g**2 - M_TOL:
            raise InstanceParameterError(f"m={self.m} violates m >= 1/gamma^2 = {1 / g**2:.6g}")
        if not g**2 - M_TOL <= self.q <= 1.0:
            raise InstanceParameterError(
                f"q={self.q} violates q in [gamma^2, 1] = [{g**2:.6g}, 1]")
        if not 0.0 < self.eps <= 0.5:
            raise InstanceParameterError(f"eps={self.eps} violates 0 < eps <= 1/2")
        if self.b is not None:
            if not self.b > 1:
                raise InstanceParameterError(f"b={self.b} violates b > 1")
            if self.m != math.ceil(self.b / g**2):
                raise InstanceParameterError(
                    f"m={self.m} violates m = ceil(b/gamma^2) = {math.ceil(self.b / g**2)}")

    @classmethod
    def from_b(cls, gamma: float, b: float, d: int, **kwargs) -> "HardInstanceSpec":
        """Derive ``m = ceil(b/gamma^2)`` and ``L = d/m``; ``d`` must be a multiple of m."""
        m = math.ceil(b / gamma**2)
        if d % m:
            raise InstanceParameterError(
                f"d={d} violates d being a multiple of ceil(b/gamma^2) = {m}")
        return cls(gamma=gamma, m=m, L=d // m, b=b, **kwargs)

    @property
    def d(self) -> int:
        return self.m * self.L

    @property
    def p(self) -> float:
        return max(0.0, (self.q - self.gamma**2) / (1 - self.gamma**2))

    @property
    def r0(self) -> float:
        if self.r0_is_zero:
            return 0.0
        return 2 * self.eps / (self.gamma ** (self.L - 1) * self.m ** (self.L / 2))

    @property
    def d_b_gamma(self) -> int | None:
        return None if self.b is None else self.d // math.ceil(self.b / self.gamma**2)

    @property
    def n_states(self) -> int:
        return (2 * self.m + 1) * self.L

    @property
    def bernoulli_p_plus(self) -> float:
        """Probability of reward +1 at the level-0 group-B states."""
        return (1 + self.r0 * (1 - self.gamma)) / 2

    @property
    def target_value(self) -> float:
        return 0.0 if self.r0_is_zero else 2 * self.eps

    def with_r0(self, zero: bool) -> "HardInstanceSpec":
        return HardInstanceSpec(self.gamma, self.m, self.L, self.q, self.eps, zero, self.b)

    # state-id layout
    def id_a(self, l: int, i: int) -> int:
        return l * self.m + i - 1

    def id_b(self, l: int, i: int) -> int:
        return self.m * self.L + l * self.m + i - 1

    def id_c(self, l: int) -> int:
        return 2 * self.m * self.L + l

    def coord(self, l: int, i: int) -> int:
        return l * self.m + i - 1


@dataclass(frozen=True, eq=False)
class HardInstanceBundle:
    spec: HardInstanceSpec
    mdp: FiniteMdp
    features: FeatureSystem
    theta: np.ndarray
    mu: np.ndarray
    groups: tuple[str, ...]
    levels: np.ndarray
    slots: np.ndarray
    target_state: int
    r0: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "r0", self.spec.r0)

    @property
    def policy(self) -> Policy:
        return Policy.uniform(self.mdp.n_actions)

    @property
    def informative_states(self) -> np.ndarray:
        return np.array([self.spec.id_b(0, i) for i in range(1, self.spec.m + 1)])


def build(spec: HardInstanceSpec) -> HardInstanceBundle:
    m, L, g, r0 = spec.m, spec.L, spec.gamma, spec.r0
    n, d = spec.n_states, spec.d
    sqm = math.sqrt(m)

    next_state = np.zeros(n, dtype=np.int64)
    values = np.zeros((n, 2))
    probs = np.zeros((n, 2))
    probs[:, 0] = 1.0
    phi = np.zeros((n, d))
    groups, levels, slots = [""] * n, np.zeros(n, dtype=np.int64), np.zeros(n, dtype=np.int64)

    for l in range(L):
        for i in range(1, m + 1):
            a, b_, e = spec.id_a(l, i), spec.id_b(l, i), spec.coord(l, i)
            next_state[a] = b_
            phi[a, e] = g
            phi[b_, e] = 1.0
            next_state[b_] = b_ if l == 0 else spec.id_c(l - 1)
            groups[a], groups[b_] = "A", "B"
            levels[a] = levels[b_] = l
            slots[a] = slots[b_] = i
        c = spec.id_c(l)
        next_state[c] = c if l == 0 else spec.id_c(l - 1)
        values[c, 0] = (r0 * sqm * (1 - g) if l == 0
                        else r0 * (sqm * g) ** l * (sqm - 1))
        phi[c, spec.coord(l, 1):spec.coord(l, m) + 1] = 1.0 / sqm
        groups[c], levels[c], slots[c] = "C", l, 0

    for i in range(1, m + 1):
        k = spec.id_b(0, i)
        values[k] = (1.0, -1.0)
        probs[k] = (spec.bernoulli_p_plus, 1.0 - spec.bernoulli_p_plus)

    P = np.zeros((n, n))
    P[np.arange(n), next_state] = 1.0
    mdp = FiniteMdp(np.ones(n, dtype=np.int64), P, values, probs, g)

    theta = np.array([r0 * (sqm * g) ** l for l in range(L) for _ in range(m)])

    mu = np.zeros(n)
    mu[:m * L] = (1 - spec.p) / (m * L)
    mu[m * L:2 * m * L] = spec.p / (m * L)

    return HardInstanceBundle(spec, mdp, FeatureSystem(mdp.n_actions, phi), theta, mu,
                              tuple(groups), levels, slots, spec.id_c(L - 1))


def analytic_values(spec: HardInstanceSpec) -> np.ndarray:
    """Closed-form state values in the documented state-id layout."""
    m, g, r0 = spec.m, spec.gamma, spec.r0
    sqm = math.sqrt(m)
    v = np.zeros(spec.n_states)
    for l in range(spec.L):
        level_value = r0 * (sqm * g) ** l
        for i in range(1, m + 1):
            v[spec.id_b(l, i)] = level_value
            v[spec.id_a(l, i)] = g * level_value
        v[spec.id_c(l)] = level_value * sqm
    return v


@dataclass(frozen=True, eq=False)
class HardInstanceCovariances:
    feature: np.ndarray
    next_feature: np.ndarray
    target: np.ndarray


def analytic_covariances(spec: HardInstanceSpec) -> HardInstanceCovariances:
    """Closed-form data, next-state and target feature second moments.

    Under ``mu`` the group-B half sends each ``s_{l,i}`` (l >= 1) to the
    level ``l-1`` group-C state, so for ``L >= 2`` the level-0 block of the
    next-state matrix is ``(p * ones + I) / d``; for ``L == 1`` there are
    no such transitions and the whole matrix is ``I / d``, so the shift
    ratio is only ``1/q``.
    """
    m, L, d, p = spec.m, spec.L, spec.d, spec.p
    lam = (spec.q / d) * np.eye(d)
    # group A lands on every e_{l,i}; group B self-loops only on level 0
    lam_bar = ((1 - p) / d) * np.eye(d)
    lam_bar[:m, :m] += (p / d) * np.eye(m)
    ones = np.ones((m, m))
    for l in range(L - 1):
        # s_{l+1,i} -> s_{l,0}, weight p/(mL) each, feature (1/sqrt m) sum_i e_{l,i}
        blk = slice(l * m, (l + 1) * m)
        lam_bar[blk, blk] += (p / L) * ones / m
    target = np.zeros((d, d))
    blk = slice((L - 1) * m, L * m)
    target[blk, blk] = ones / m
    return HardInstanceCovariances(lam, lam_bar, target)


def describe_states(bundle: HardInstanceBundle) -> list[dict]:
    """Per-state rows ``state_id, group, l, i, reward_spec, next_state``."""
    mdp = bundle.mdp
    rows = []
    for s in range(mdp.n_states):
        vals, probs = mdp.reward_values[s], mdp.reward_probs[s]
        if probs[1] > 0:
            reward_spec = f"pm1:p_plus={float(probs[0]):.17g}"
        else:
            reward_spec = f"const:{float(vals[0]):.17g}"
        rows.append({
            "state_id": s,
            "group": bundle.groups[s],
            "l": int(bundle.levels[s]),
            "i": int(bundle.slots[s]),
            "reward_spec": reward_spec,
            "next_state": int(np.argmax(mdp.transition[s])),
        })
    return rows
