"""Empirical Gram matrices, matrix-concentration checks and assumption audits."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import (FeatureSystem, exact_covariance, exact_next_covariance,
                       target_covariance, tilde_phi_table)
from .lspe import C1, ShiftConstants, shift_constants
from .mdp import FiniteMdp, Policy, exact_values
from .sampling import OfflineDataset

DEFAULT_DELTA = 0.05
STREAM_CHUNK = 1 << 16


def spectral_norm(sym: np.ndarray) -> float:
    w = np.linalg.eigvalsh((sym + sym.T) / 2)
    return float(max(abs(w[0]), abs(w[-1])))


def concentration_threshold(n: int, d: int, delta: float) -> float:
    """``C1 * sqrt(ln(2d/delta) / n)``."""
    return C1 * math.sqrt(math.log(2 * d / delta) / n)


@dataclass(frozen=True, eq=False)
class CovarianceReport:
    lambda_emp: np.ndarray
    lambda_bar_emp: np.ndarray
    n: int
    dev: float | None = None
    dev_bar: float | None = None
    threshold: float | None = None

    @property
    def passed(self) -> bool | None:
        if self.threshold is None:
            return None
        return self.dev <= self.threshold and self.dev_bar <= self.threshold

    @property
    def margin(self) -> float | None:
        return None if self.threshold is None else self.threshold - max(self.dev, self.dev_bar)


def empirical_covariances(ds: OfflineDataset, fs: FeatureSystem,
                          policy: Policy) -> CovarianceReport:
    """``Phi^T Phi / N`` and ``PhiBar^T PhiBar / N``, accumulated in chunks."""
    if ds.n == 0:
        raise ValueError("empirical covariances need a nonempty dataset")
    tphi = tilde_phi_table(fs, policy)
    pairs = ds.pairs(fs.n_actions)
    G = np.zeros((fs.dim, fs.dim))
    Gb = np.zeros((fs.dim, fs.dim))
    for start in range(0, ds.n, STREAM_CHUNK):
        sl = slice(start, start + STREAM_CHUNK)
        Phi = fs.phi[pairs[sl]]
        PhiBar = tphi[ds.next_states[sl]]
        G += Phi.T @ Phi
        Gb += PhiBar.T @ PhiBar
    return CovarianceReport((G + G.T) / (2 * ds.n), (Gb + Gb.T) / (2 * ds.n), ds.n)


def concentration_check(report: CovarianceReport, lambda_exact, lambda_bar_exact,
                        delta: float = DEFAULT_DELTA) -> CovarianceReport:
    d = report.lambda_emp.shape[0]
    return CovarianceReport(
        report.lambda_emp, report.lambda_bar_emp, report.n,
        dev=spectral_norm(report.lambda_emp - lambda_exact),
        dev_bar=spectral_norm(report.lambda_bar_emp - lambda_bar_exact),
        threshold=concentration_threshold(report.n, d, delta))


@dataclass(frozen=True)
class AssumptionAudit:
    realizability_residual: float
    max_feature_norm: float
    shift: ShiftConstants
    lambda_min: float
    lambda_max: float
    trace: float

    def as_dict(self) -> dict:
        return {
            "assumption1_residual": self.realizability_residual,
            "assumption2_max_norm": self.max_feature_norm,
            "lambda_min": self.lambda_min,
            "lambda_max": self.lambda_max,
            "lambda_trace": self.trace,
            "shift_c": self.shift.c,
            "shift_c0": self.shift.c0,
            "beta": self.shift.beta,
            "assumption4": self.shift.assumption_holds,
            "bound_applicable": self.shift.bound_applicable,
        }


def audit(mdp: FiniteMdp, policy: Policy, fs: FeatureSystem, theta, mu, target_state: int,
          eta: float) -> AssumptionAudit:
    q = exact_values(mdp, policy).q
    residual = float(np.max(np.abs(fs.phi @ np.asarray(theta, dtype=float) - q)))
    cov = exact_covariance(fs, mu)
    cov_bar = exact_next_covariance(mdp, fs, policy, mu)
    shift = shift_constants(cov.matrix, cov_bar.matrix, target_covariance(fs, policy, target_state),
                            eta, mdp.gamma)
    return AssumptionAudit(residual, fs.max_norm(), shift, cov.lambda_min, cov.lambda_max,
                           cov.trace)


def audit_assumptions(bundle, eta: float = 0.5) -> AssumptionAudit:
    """Audit a :class:`~ope_lab.hard_instance.HardInstanceBundle` (or any object
    exposing ``mdp``, ``policy``, ``features``, ``theta``, ``mu``, ``target_state``)."""
    return audit(bundle.mdp, bundle.policy, bundle.features, bundle.theta, bundle.mu,
                 bundle.target_state, eta)
