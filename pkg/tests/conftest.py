import numpy as np
import pytest

from faqtor.mdp_core import FactoredActionSpace, Policy, TabularMdp


def random_mdp(rng, n_states, cards, gamma, reward_scale=1.0):
    space = FactoredActionSpace(tuple(cards))
    P = rng.random((n_states, space.total, n_states)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-reward_scale, reward_scale, (n_states, space.total))
    mu = rng.random(n_states)
    return TabularMdp(n_states, space, P, R, gamma, mu / mu.sum())


def random_policy(rng, n_states, n_actions, deterministic=False):
    if deterministic:
        return Policy.from_actions(rng.integers(n_actions, size=n_states), n_actions)
    T = rng.random((n_states, n_actions))
    return Policy(T / T.sum(axis=1, keepdims=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria register one line each here; the summary hook prints them at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
