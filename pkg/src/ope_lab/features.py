"""Linear feature maps over state-action pairs and exact feature covariances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import FiniteMdp, Policy, exact_values, pair_offsets

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureSystem:
    """Feature table ``phi[k]`` for every flattened state-action pair ``k``."""

    n_actions: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n_actions", np.asarray(self.n_actions, dtype=np.int64))
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != int(self.n_actions.sum()):
            raise ValueError("phi must be (n_pairs, d)")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def dim(self) -> int:
        return self.phi.shape[1]

    def pair(self, s: int, a: int) -> int:
        if not 0 <= s < len(self.n_actions) or not 0 <= a < self.n_actions[s]:
            raise IndexError(f"(s={s}, a={a}) is not a valid state-action pair")
        return int(pair_offsets(self.n_actions)[s] + a)

    def max_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.phi, axis=1)))

    def violations(self) -> list[str]:
        norms = np.linalg.norm(self.phi, axis=1)
        return [f"pair {k}: feature norm {norms[k]!r} exceeds 1"
                for k in np.flatnonzero(norms > 1.0 + NORM_TOL)]

    def normalized(self, theta: np.ndarray | None = None):
        """Rescale features to max norm 1; ``theta`` is scaled inversely so that
        ``phi @ theta`` is unchanged.  Returns ``(fs, theta)``."""
        scale = self.max_norm()
        fs = FeatureSystem(self.n_actions, self.phi / scale)
        return fs, (None if theta is None else np.asarray(theta, dtype=float) * scale)


def one_hot_features(n_actions) -> FeatureSystem:
    n_pairs = int(np.sum(n_actions))
    return FeatureSystem(n_actions, np.eye(n_pairs))


def _check_dim(fs: FeatureSystem, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (fs.dim,):
        raise ValueError(f"theta has shape {theta.shape}, features have dimension {fs.dim}")
    return theta


def q_linear(fs: FeatureSystem, theta, s: int, a: int) -> float:
    theta = _check_dim(fs, theta)
    return float(fs.phi[fs.pair(s, a)] @ theta)


def tilde_phi_table(fs: FeatureSystem, policy: Policy) -> np.ndarray:
    """(n_states, d) table of policy-averaged features."""
    return policy.state_pair_matrix() @ fs.phi


def tilde_phi(fs: FeatureSystem, policy: Policy, s: int) -> np.ndarray:
    if not 0 <= s < len(fs.n_actions):
        raise IndexError(f"state {s} out of range")
    k0 = int(pair_offsets(fs.n_actions)[s])
    return policy.action_dist(s) @ fs.phi[k0:k0 + fs.n_actions[s]]


def check_realizability(mdp: FiniteMdp, policy: Policy, fs: FeatureSystem, theta) -> float:
    """Max over pairs of ``|phi(s,a) . theta - Q^pi(s,a)|``."""
    theta = _check_dim(fs, theta)
    q = exact_values(mdp, policy).q
    return float(np.max(np.abs(fs.phi @ theta - q)))


@dataclass(frozen=True)
class Covariance:
    matrix: np.ndarray
    lambda_min: float
    lambda_max: float
    trace: float


def _summarize(matrix: np.ndarray) -> Covariance:
    eig = np.linalg.eigvalsh(matrix)
    return Covariance(matrix, float(eig[0]), float(eig[-1]), float(np.trace(matrix)))


def exact_covariance(fs: FeatureSystem, mu) -> Covariance:
    """``sum_k mu[k] phi_k phi_k^T`` with its extreme eigenvalues and trace."""
    mu = np.asarray(mu, dtype=float)
    M = (fs.phi * mu[:, None]).T @ fs.phi
    return _summarize((M + M.T) / 2)


def exact_next_covariance(mdp: FiniteMdp, fs: FeatureSystem, policy: Policy, mu) -> Covariance:
    """Second moment of ``tilde_phi(s_next)`` with ``(s,a) ~ mu`` and ``s_next ~ P(.|s,a)``."""
    next_mass = np.asarray(mu, dtype=float) @ mdp.transition
    tphi = tilde_phi_table(fs, policy)
    M = (tphi * next_mass[:, None]).T @ tphi
    return _summarize((M + M.T) / 2)


def target_covariance(fs: FeatureSystem, policy: Policy, s0: int) -> np.ndarray:
    t = tilde_phi(fs, policy, s0)
    return np.outer(t, t)


def validate_distribution(mu) -> list[str]:
    mu = np.asarray(mu, dtype=float)
    out = []
    if np.any(mu < 0):
        out.append("distribution has negative weights")
    if abs(mu.sum() - 1.0) > 1e-12:
        out.append(f"distribution weights sum to {mu.sum()!r}")
    return out
