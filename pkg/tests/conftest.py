import numpy as np
import pytest

from ope_lab.features import one_hot_features
from ope_lab.hard_instance import HardInstanceSpec, build
from ope_lab.mdp import FiniteMdp, random_mdp, random_policy

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_spec():
    return HardInstanceSpec(gamma=0.9, m=2, L=2, q=1.0, eps=0.1)


@pytest.fixture
def small_bundle(small_spec):
    return build(small_spec)


@pytest.fixture
def scalar_mdp():
    return FiniteMdp.deterministic([0], [1.0], 0.5)


@pytest.fixture
def tabular():
    """Random 5-state, 2-action MDP with one-hot features and a random policy."""
    rng = np.random.default_rng(42)
    mdp = random_mdp(5, 2, 0.7, rng)
    policy = random_policy(mdp.n_actions, rng)
    return mdp, policy, one_hot_features(mdp.n_actions)
