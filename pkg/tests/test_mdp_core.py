import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_mdp, random_policy
from faqtor.gallery import chain1d, chain2d
from faqtor.mdp_core import (
    CompositionError,
    FactoredActionSpace,
    MdpError,
    NonConvergentEvaluationError,
    Policy,
    TabularMdp,
    UnsupportedDiscountError,
    action_index,
    compose_factored_policy,
    compose_parallel,
    decompose_action,
    finite_horizon_value,
    greedy_policy,
    h_step_q,
    load_mdp,
    mdp_from_dict,
    mdp_to_dict,
    policy_evaluation_exact,
    policy_value,
    save_mdp,
    value_iteration,
)

cards_st = st.lists(st.integers(2, 5), min_size=1, max_size=4)


# ---------------------------------------------------------------- action space


def test_action_index_examples():
    assert action_index([0, 0], FactoredActionSpace((2, 2))) == 0
    assert action_index([1, 1], FactoredActionSpace((2, 2))) == 3


def test_action_index_mixed_radix_by_enumeration():
    space = FactoredActionSpace((2, 3, 2))
    # itertools.product enumerates with the first coordinate most significant
    listing = list(itertools.product(range(2), range(3), range(2)))
    assert listing.index((1, 2, 0)) == 10
    assert action_index([1, 2, 0], space) == 10
    for i, vec in enumerate(listing):
        assert action_index(vec, space) == i


def test_action_index_out_of_range_names_dimension():
    with pytest.raises(IndexError, match="dimension 1"):
        action_index([0, 3], FactoredActionSpace((2, 3)))


def test_cardinality_one_rejected():
    with pytest.raises(MdpError):
        FactoredActionSpace((2, 1))


@given(cards_st, st.data())
def test_index_vector_bijection(cards, data):
    space = FactoredActionSpace(tuple(cards))
    assert space.total == int(np.prod(cards))
    i = data.draw(st.integers(0, space.total - 1))
    assert action_index(decompose_action(i, space), space) == i


@given(cards_st)
def test_all_subactions_enumerates_every_index(cards):
    space = FactoredActionSpace(tuple(cards))
    subs = space.all_subactions()
    assert [action_index(v, space) for v in subs] == list(range(space.total))


# ---------------------------------------------------------------- MDP validation


def test_transition_rows_must_sum_to_one():
    space = FactoredActionSpace((2,))
    P = np.full((2, 2, 2), 0.5)
    P[0, 0] = [0.5, 0.6]
    with pytest.raises(MdpError):
        TabularMdp(2, space, P, np.zeros((2, 2)), 0.9, np.array([1.0, 0.0]))


def test_negative_probability_rejected():
    space = FactoredActionSpace((2,))
    P = np.full((2, 2, 2), 0.5)
    P[0, 0] = [1.5, -0.5]
    with pytest.raises(MdpError):
        TabularMdp(2, space, P, np.zeros((2, 2)), 0.9, np.array([1.0, 0.0]))


def test_initial_distribution_and_reward_checked():
    space = FactoredActionSpace((2,))
    P = np.full((2, 2, 2), 0.5)
    with pytest.raises(MdpError):
        TabularMdp(2, space, P, np.zeros((2, 2)), 0.9, np.array([0.7, 0.7]))
    R = np.zeros((2, 2))
    R[0, 0] = np.inf
    with pytest.raises(MdpError):
        TabularMdp(2, space, P, R, 0.9, np.array([1.0, 0.0]))


def test_policy_rows_validated():
    with pytest.raises(MdpError):
        Policy(np.array([[0.5, 0.4]]))
    assert Policy.from_actions([1, 0], 2).deterministic


# ---------------------------------------------------------------- evaluation


def test_chain1d_always_right():
    mdp = chain1d(0.9)
    q = policy_evaluation_exact(mdp, Policy.from_actions([1, 1], 2)).values
    np.testing.assert_allclose(q[0], [0.9, 1.0], atol=1e-12)
    np.testing.assert_allclose(q[1], [0.0, 0.0], atol=1e-12)


def test_zero_reward_gives_zero_q(rng):
    mdp = random_mdp(rng, 4, (2, 3), 0.9, reward_scale=0.0)
    q = policy_evaluation_exact(mdp, Policy.uniform(4, 6)).values
    assert np.all(q == 0)
    assert policy_value(mdp, Policy.uniform(4, 6)) == 0.0


def test_gamma_one_exact_evaluation_rejected():
    with pytest.raises(NonConvergentEvaluationError):
        policy_evaluation_exact(chain1d(1.0), Policy.from_actions([0, 0], 2))


def test_h_step_examples():
    mdp = chain1d(0.9)
    pi = Policy.from_actions([1, 1], 2)
    np.testing.assert_array_equal(h_step_q(mdp, pi, 1).values, mdp.reward)
    np.testing.assert_allclose(h_step_q(mdp, pi, 2).values[0], [0.9, 1.0], atol=1e-12)
    with pytest.raises(ValueError):
        h_step_q(mdp, pi, 0)


def test_h_step_gamma_zero_is_reward(rng):
    mdp = random_mdp(rng, 3, (2, 2), 0.0)
    pi = random_policy(rng, 3, 4)
    np.testing.assert_allclose(h_step_q(mdp, pi, 7).values, mdp.reward, atol=1e-15)


def test_value_iteration_chains():
    q, pi = value_iteration(chain1d(0.9))
    assert pi.greedy_actions()[0] == 1
    assert q.values[0].max() == pytest.approx(1.0, abs=1e-9)
    mdp2 = chain2d(0.9)
    q2, pi2 = value_iteration(mdp2)
    assert q2.values[0].max() == pytest.approx(2.0, abs=1e-9)
    assert pi2.greedy_actions()[0] == 3


def test_value_iteration_bandit_style_mdp():
    # one nonterminal state whose every action leads to an absorbing zero-reward state
    space = FactoredActionSpace((2, 2))
    P = np.zeros((2, 4, 2))
    P[:, :, 1] = 1.0
    R = np.array([[0.3, -1.0, 0.7, 0.1], [0.0, 0.0, 0.0, 0.0]])
    mdp = TabularMdp(2, space, P, R, 0.9, np.array([1.0, 0.0]))
    _, pi = value_iteration(mdp)
    assert pi.greedy_actions()[0] == 2


def test_value_iteration_gamma_one_unsupported():
    with pytest.raises(UnsupportedDiscountError):
        value_iteration(chain1d(1.0))


def test_greedy_ties_lowest_index():
    pi = greedy_policy(np.array([[1.0, 2.0, 2.0], [0.0, 0.0, 0.0]]))
    assert pi.greedy_actions().tolist() == [1, 0]


def test_policy_value_chain2d_start_state():
    mdp = chain2d(0.9)
    # start from s00 by construction of the chain fixture
    assert mdp.initial_dist[0] == 1.0
    _, pi = value_iteration(mdp)
    assert policy_value(mdp, pi) == pytest.approx(2.0, abs=1e-9)
    # left/down everywhere never reaches a reward from s00
    assert policy_value(mdp, Policy.from_actions([0, 0, 0, 0], 4)) == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.5, 0.9, 0.99]))
def test_bellman_residual(seed, gamma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, int(rng.integers(1, 8)), (2, 3), gamma)
    pi = random_policy(rng, mdp.n_states, 6)
    Q = policy_evaluation_exact(mdp, pi).values
    V = (pi.table * Q).sum(axis=1)
    assert np.abs(Q - (mdp.reward + gamma * mdp.transition @ V)).max() < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_h_step_converges_at_geometric_rate(seed, h):
    rng = np.random.default_rng(seed)
    gamma = 0.8
    mdp = random_mdp(rng, 4, (2, 2), gamma)
    pi = random_policy(rng, 4, 4)
    gap = np.abs(h_step_q(mdp, pi, h).values - policy_evaluation_exact(mdp, pi).values).max()
    assert gap <= gamma**h * np.abs(mdp.reward).max() / (1 - gamma) + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_value_iteration_beats_random_policies(seed):
    rng = np.random.default_rng(seed)
    tol = 1e-10
    mdp = random_mdp(rng, 5, (2, 2), 0.9)
    _, pi = value_iteration(mdp, tol)
    best = policy_value(mdp, pi)
    for _ in range(100):
        other = random_policy(rng, 5, 4, deterministic=bool(rng.integers(2)))
        assert best >= policy_value(mdp, other) - 2 * tol / (1 - 0.9)


# ---------------------------------------------------------------- composition


def test_two_chains_compose_to_chain2d():
    c = chain1d(0.9)
    joint = compose_parallel([c, c])
    ref = chain2d(0.9)
    np.testing.assert_array_equal(joint.transition, ref.transition)
    np.testing.assert_array_equal(joint.reward, ref.reward)
    assert joint.reward[0, 3] == 2.0


def test_compose_single_is_identity(rng):
    m = random_mdp(rng, 3, (2, 3), 0.5)
    j = compose_parallel([m])
    np.testing.assert_allclose(j.transition, m.transition)
    np.testing.assert_allclose(j.reward, m.reward)


def test_compose_uniform_rows_sum_to_one():
    space = FactoredActionSpace((2,))
    P = np.full((2, 2, 2), 0.5)
    m = TabularMdp(2, space, P, np.zeros((2, 2)), 0.5, np.array([0.5, 0.5]))
    j = compose_parallel([m, m])
    np.testing.assert_allclose(j.transition.sum(axis=2), 1.0, atol=1e-15)
    assert j.n_states == 4 and j.actions.cardinalities == (2, 2)


def test_compose_mismatched_discount():
    with pytest.raises(CompositionError):
        compose_parallel([chain1d(0.9), chain1d(0.5)])


def test_compose_factored_policy_examples():
    c = chain1d(0.9)
    right = Policy.from_actions([1, 1], 2)
    joint = compose_factored_policy([right, right], [c, c])
    assert joint.greedy_actions().tolist() == [3, 3, 3, 3] and joint.deterministic
    u = compose_factored_policy([Policy.uniform(2, 2)] * 2, [c, c])
    np.testing.assert_allclose(u.table, 0.25)
    with pytest.raises(CompositionError):
        compose_factored_policy([right], [c, c])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 3))
def test_parallel_q_is_sum_of_component_q(seed, D):
    rng = np.random.default_rng(seed)
    comps = [random_mdp(rng, int(rng.integers(2, 5)), (int(rng.integers(2, 4)),), 0.9) for _ in range(D)]
    pols = [random_policy(rng, m.n_states, m.n_actions) for m in comps]
    joint = compose_parallel(comps)
    Q = policy_evaluation_exact(joint, compose_factored_policy(pols, comps)).values
    parts = [policy_evaluation_exact(m, p).values for m, p in zip(comps, pols)]
    expected = np.zeros_like(Q)
    for s_vec in itertools.product(*(range(m.n_states) for m in comps)):
        s = int(np.ravel_multi_index(s_vec, [m.n_states for m in comps]))
        for a_vec in itertools.product(*(range(m.n_actions) for m in comps)):
            a = action_index(a_vec, joint.actions)
            expected[s, a] = sum(q[sd, ad] for q, sd, ad in zip(parts, s_vec, a_vec))
    assert np.abs(Q - expected).max() < 1e-9


# ---------------------------------------------------------------- serialization


def test_json_round_trip_full_precision(tmp_path, rng):
    m = random_mdp(rng, 3, (2, 2), 0.37)
    path = tmp_path / "m.json"
    save_mdp(m, path)
    back = load_mdp(path)
    np.testing.assert_array_equal(back.transition, m.transition)
    np.testing.assert_array_equal(back.reward, m.reward)
    assert back.gamma == m.gamma
    doc = json.loads(path.read_text())
    assert set(doc) == {"n_states", "cardinalities", "gamma", "initial_dist", "transition", "reward"}
    assert mdp_to_dict(mdp_from_dict(doc)) == doc


def test_finite_horizon_value_matches_manual_rollout():
    mdp = chain2d(0.9)
    pi = Policy.from_actions([3, 3, 3, 3], 4)
    # one step from s00 under NE collects 2 and lands in the absorbing corner
    assert finite_horizon_value(mdp, pi, 1) == pytest.approx(2.0)
    assert finite_horizon_value(mdp, pi, 5) == pytest.approx(2.0)
