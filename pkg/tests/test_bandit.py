import itertools

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from faqtor.bandit import (
    SPACE,
    Bandit2D,
    factored_argmax,
    grid_axis,
    heatmap_sweep,
    ovb_qhat,
    q_star,
    rmse,
    standardize,
    suboptimality,
)
from faqtor.factorization import fit_factored_q

finite = st.floats(-4, 4, allow_nan=False)


def brute_suboptimality(q_true, q_hat):
    q_hat = list(q_hat)
    best = max(range(4), key=lambda a: (q_hat[a], -a))
    return max(q_true) - q_true[best]


def test_standardize_examples():
    s = standardize([0, 1, 1, 2])
    assert (s.alpha, s.beta, s.swap_x, s.swap_y, s.shift, s.scale) == (1, 0, False, False, 0, 1)
    s = standardize([5, 5, 7, 9])
    assert (s.alpha, s.beta, s.shift, s.scale) == (0, 1, 5, 2)
    s = standardize([1, 1, 0, 0])
    assert s.swap_x and not s.swap_y
    assert (s.alpha, s.beta) == (0, 0)
    assert s.degenerate == "y"


def test_standardize_x_irrelevant():
    s = standardize([1, 2, 1, 2])
    assert s.degenerate == "x" and s.alpha is None
    s = standardize([3, 3, 3, 3])
    assert s.degenerate == "xy"


def test_standardize_rejects_bad_input():
    with pytest.raises(ValueError):
        standardize([0, 1, np.nan, 2])
    with pytest.raises(ValueError):
        standardize([0, 1, 2])


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4))
def test_standardize_transform_gives_standard_form(r):
    s = standardize(r)
    assume(s.alpha is not None)
    # a scale far below the reward magnitude turns beta into a difference of huge, rounded numbers
    assume(abs(s.scale) > 1e-6 * max(1.0, float(np.abs(r).max())))
    np.testing.assert_allclose(s.transform(r), q_star(s.alpha, s.beta), atol=1e-9)
    assert Bandit2D(tuple(r)).standardize() == s


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4))
def test_arm_choice_invariant_under_standardization(r):
    s = standardize(r)
    assume(s.alpha is not None)
    qhat = ovb_qhat(s.alpha, s.beta)
    # skip measure-zero ties in either problem
    assume(np.sort(qhat)[-1] - np.sort(qhat)[-2] > 1e-9)
    fit = fit_factored_q(np.asarray(r, float), SPACE)[1]
    assume(np.sort(fit)[-1] - np.sort(fit)[-2] > 1e-9)
    assert s.to_original_arm(int(np.argmax(qhat))) == factored_argmax(r)


def test_ovb_examples():
    np.testing.assert_allclose(ovb_qhat(2.5, 0), q_star(2.5, 0), atol=1e-15)
    np.testing.assert_allclose(ovb_qhat(1, 1), [-0.25, 1.25, 1.25, 2.75])
    np.testing.assert_allclose(ovb_qhat(1, -3), [0.75, 0.25, 0.25, -0.25])


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_ovb_matches_least_squares(alpha, beta):
    fit = fit_factored_q(q_star(alpha, beta), SPACE)[1]
    assert np.abs(fit - ovb_qhat(alpha, beta)).max() < 1e-10


def test_ovb_broadcasts():
    out = ovb_qhat(np.zeros((3, 2)), 1.0)
    assert out.shape == (3, 2, 4)


def test_rmse_examples():
    assert rmse([1, 2, 3, 4], [1, 2, 3, 4]) == 0
    assert rmse(q_star(3.0, 0), ovb_qhat(3.0, 0)) == 0
    # brute-force subtraction: every entry differs by beta/4
    diff = np.array([0, 1, 1, 3]) - np.array([-0.25, 1.25, 1.25, 2.75])
    assert np.allclose(np.abs(diff), 0.25)
    assert rmse([0, 1, 1, 3], ovb_qhat(1, 1)) == pytest.approx(np.sqrt(np.mean(diff**2)))
    assert rmse([0, 1, 1, 3], ovb_qhat(1, 1)) == pytest.approx(0.25)


@settings(max_examples=200, deadline=None)
@given(finite, finite)
def test_rmse_closed_form(alpha, beta):
    assert rmse(q_star(alpha, beta), ovb_qhat(alpha, beta)) == pytest.approx(abs(beta) / 4, abs=1e-12)


def test_suboptimality_examples():
    for beta in np.arange(-1.0, 4.0001, 0.05):
        assert suboptimality(q_star(1, beta), ovb_qhat(1, beta)) == 0
    assert int(np.argmax(ovb_qhat(1, -3))) == 0
    assert suboptimality(q_star(1, -3), ovb_qhat(1, -3)) == 1
    assert suboptimality([0.2, 0.1, 0.5, 0.4], [0.2, 0.1, 0.5, 0.4]) == 0


@settings(max_examples=300, deadline=None)
@given(finite, finite)
def test_suboptimality_matches_brute_force(alpha, beta):
    q, qh = q_star(alpha, beta), ovb_qhat(alpha, beta)
    assert suboptimality(q, qh) == pytest.approx(brute_suboptimality(list(q), qh))
    assert suboptimality(q, qh) >= 0


def test_grid_axis_exact_midpoint():
    ax = grid_axis(-4, 4, 161)
    assert ax[80] == 0.0 and ax[0] == -4 and ax[-1] == 4
    assert np.allclose(np.diff(ax), 0.05)
    with pytest.raises(ValueError):
        grid_axis(0, 1, 1)


def test_heatmap_regions():
    g = heatmap_sweep()
    assert g.rmse.shape == (161, 161)
    zero_rows = np.flatnonzero((np.abs(g.rmse) <= 1e-12).all(axis=1))
    assert g.betas[zero_rows].tolist() == [0.0]
    assert (g.rmse[g.betas != 0] > 1e-12).all()
    quad = np.ix_(g.betas >= 0, g.alphas >= 0)
    assert (g.suboptimality[quad] == 0).all()
    i = int(np.flatnonzero(g.alphas == 1.0)[0])
    assert (g.suboptimality[g.betas >= -1, i] == 0).all()
    assert g.suboptimality[0, 0] > 0  # (alpha, beta) = (-4, -4)


def test_heatmap_matches_pointwise_functions():
    g = heatmap_sweep((-1, 1), (-2, 2), (5, 7))
    for a, b, e, s in g.rows():
        assert e == pytest.approx(rmse(q_star(a, b), ovb_qhat(a, b)), abs=1e-12)
        assert s == suboptimality(q_star(a, b), ovb_qhat(a, b))


def test_heatmap_csv(tmp_path):
    g = heatmap_sweep(resolution=3)
    path = tmp_path / "h.csv"
    g.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "alpha,beta,rmse,suboptimality"
    assert len(lines) == 1 + 9
    first = [tuple(map(float, l.split(",")[:2])) for l in lines[1:4]]
    assert first == [(-4.0, -4.0), (0.0, -4.0), (4.0, -4.0)]


def test_all_arms_enumerated_consistently():
    for bits in itertools.product(range(2), repeat=2):
        assert SPACE.index(bits) == 2 * bits[0] + bits[1]
