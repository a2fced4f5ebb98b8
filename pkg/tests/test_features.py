import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ope_lab.features import (FeatureSystem, check_realizability, exact_covariance, q_linear,
                              tilde_phi, tilde_phi_table, one_hot_features)
from ope_lab.hard_instance import HardInstanceSpec, build
from ope_lab.mdp import Policy, exact_values


def test_q_linear_zero_theta(tabular):
    _, _, fs = tabular
    assert q_linear(fs, np.zeros(fs.dim), 3, 1) == 0.0


def test_q_linear_dimension_mismatch(tabular):
    _, _, fs = tabular
    with pytest.raises(ValueError):
        q_linear(fs, np.zeros(fs.dim + 1), 0, 0)


def test_q_linear_hard_instance(small_bundle):
    spec = small_bundle.spec
    for l in range(spec.L):
        for i in range(1, spec.m + 1):
            got = q_linear(small_bundle.features, small_bundle.theta, spec.id_b(l, i), 0)
            assert got == pytest.approx(spec.r0 * (np.sqrt(spec.m) * spec.gamma) ** l, abs=1e-15)


def test_q_linear_one_hot_recovers_table(tabular):
    mdp, policy, fs = tabular
    q = exact_values(mdp, policy).q
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions[s]):
            assert q_linear(fs, q, s, a) == q[mdp.pair(s, a)]


class TestTildePhi:
    def test_single_action(self, small_bundle):
        fs = small_bundle.features
        for s in range(len(fs.n_actions)):
            assert np.array_equal(tilde_phi(fs, small_bundle.policy, s), fs.phi[s])

    def test_uniform_average(self):
        fs = FeatureSystem([2], np.eye(2))
        assert np.allclose(tilde_phi(fs, Policy.uniform([2]), 0), [0.5, 0.5])

    def test_group_c_feature(self, small_bundle):
        spec = small_bundle.spec
        expected = np.zeros(spec.d)
        for i in range(1, spec.m + 1):
            expected[spec.coord(1, i)] = 1 / np.sqrt(spec.m)
        got = tilde_phi(small_bundle.features, small_bundle.policy, spec.id_c(1))
        assert np.allclose(got, expected, atol=1e-15)

    def test_table_matches_pointwise(self, tabular):
        mdp, policy, fs = tabular
        table = tilde_phi_table(fs, policy)
        for s in range(mdp.n_states):
            assert np.allclose(table[s], tilde_phi(fs, policy, s), atol=1e-15)


class TestRealizability:
    @pytest.mark.parametrize("zero", [False, True])
    def test_hard_instance(self, zero):
        b = build(HardInstanceSpec(0.9, 2, 3, q=0.9, r0_is_zero=zero))
        assert check_realizability(b.mdp, b.policy, b.features, b.theta) <= 1e-9

    def test_one_hot(self, tabular):
        mdp, policy, fs = tabular
        q = exact_values(mdp, policy).q
        assert check_realizability(mdp, policy, fs, q) <= 1e-10

    def test_perturbation_detected(self, small_bundle):
        theta = small_bundle.theta.copy()
        j = 1
        theta[j] += 0.1
        col = small_bundle.features.phi[:, j]
        min_entry = col[col > 0].min()
        res = check_realizability(small_bundle.mdp, small_bundle.policy, small_bundle.features,
                                  theta)
        assert res >= 0.1 * min_entry - 1e-12


class TestCovariance:
    def test_two_basis_vectors(self):
        fs = FeatureSystem([1, 1], np.eye(2))
        cov = exact_covariance(fs, [0.5, 0.5])
        assert np.allclose(cov.matrix, np.diag([0.5, 0.5]))
        assert (cov.lambda_min, cov.lambda_max, cov.trace) == pytest.approx((0.5, 0.5, 1.0))

    def test_hard_instance_full_coverage(self):
        b = build(HardInstanceSpec(0.9, 2, 3, q=1.0))
        cov = exact_covariance(b.features, b.mu)
        assert np.allclose(cov.matrix, np.eye(6) / 6, atol=1e-12, rtol=0)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)),
                  elements=st.floats(-1, 1)),
           st.integers(0, 2**32 - 1))
    def test_trace_and_min_eigenvalue(self, raw, seed):
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        phi = raw / np.maximum(norms, 1.0)
        fs = FeatureSystem(np.ones(len(phi), dtype=int), phi)
        mu = np.random.default_rng(seed).dirichlet(np.ones(len(phi)))
        cov = exact_covariance(fs, mu)
        assert np.allclose(cov.matrix, cov.matrix.T, atol=1e-12)
        assert cov.lambda_min >= -1e-12
        assert cov.trace <= 1 + 1e-12
        assert cov.lambda_min <= 1 / fs.dim + 1e-12


def test_normalization_preserves_q():
    fs = FeatureSystem([1, 1], [[2.0, 0.0], [1.0, 1.0]])
    theta = np.array([0.3, -0.7])
    fs2, theta2 = fs.normalized(theta)
    assert fs2.max_norm() == pytest.approx(1.0)
    assert np.allclose(fs2.phi @ theta2, fs.phi @ theta)
    assert fs.violations() and not fs2.violations()


def test_one_hot_dimension():
    fs = one_hot_features([2, 3])
    assert fs.dim == 5 and fs.pair(1, 2) == 4
