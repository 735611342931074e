import numpy as np
import pytest

from signvr.core import RngStream, stochastic_sign
from signvr.optimizers import fs_estimator_update
from signvr.oracles import make_finite_sum_quadratic
from signvr.verify import (
    enumerate_vote_distribution,
    finite_diff_grad,
    mc_expectation,
    run_all_checks,
    svrg_reference_estimator,
)


def test_finite_diff_on_plain_quadratic():
    loss = lambda x: 0.5 * float(np.dot(x, x))
    g = finite_diff_grad(loss, np.array([1.0, 2.0]), 1e-6)
    assert np.max(np.abs(g - [1.0, 2.0])) <= 1e-6


def test_finite_diff_constant_loss_is_zero():
    g = finite_diff_grad(lambda x: 3.14, np.ones(4), 1e-6)
    assert np.array_equal(g, np.zeros(4))


def test_finite_diff_matches_regularizer_derivative():
    # d/dz [z^2/(1+z^2)] at z=1 is 2z/(1+z^2)^2 = 0.5
    loss = lambda x: float(np.sum(x**2 / (1 + x**2)))
    g = finite_diff_grad(loss, np.array([1.0]), 1e-6)
    assert abs(g[0] - 0.5) <= 1e-6


def test_finite_diff_rejects_bad_step():
    with pytest.raises(ValueError):
        finite_diff_grad(lambda x: 0.0, np.ones(2), 0.0)


def test_enumeration_single_vote():
    dist = enumerate_vote_distribution(np.array([[0.7]]), option=1)
    assert dist.p_plus()[0] == pytest.approx(0.7, abs=1e-15)
    assert dist.p_minus()[0] == pytest.approx(0.3, abs=1e-15)
    assert dist.p_zero()[0] == 0.0


def test_enumeration_symmetric_three_votes():
    dist = enumerate_vote_distribution(np.full((3, 1), 0.5), option=1)
    assert dist.p_plus()[0] == pytest.approx(0.5, abs=1e-15)


def test_enumeration_pinned_majority_value():
    # recomputed by hand: sum over the four majority-plus patterns of (0.9, 0.8, 0.3)
    # = 0.216 + 0.504 + 0.054 + 0.024 = 0.798
    dist = enumerate_vote_distribution(np.array([[0.9], [0.8], [0.3]]), option=1)
    assert dist.p_plus()[0] == pytest.approx(0.798, abs=1e-12)
    assert dist.p_minus()[0] == pytest.approx(0.202, abs=1e-12)


def test_enumeration_option2_two_votes_closed_form():
    p1, p2 = 0.9, 0.4
    dist = enumerate_vote_distribution(np.array([[p1], [p2]]), option=2)
    # mean is +1 w.p. p1 p2, 0 w.p. p1(1-p2)+(1-p1)p2, -1 otherwise; S_1 maps mean mu
    # to +1 with probability (1+mu)/2
    expect = p1 * p2 * 1.0 + (p1 * (1 - p2) + (1 - p1) * p2) * 0.5
    assert dist.p_plus()[0] == pytest.approx(expect, abs=1e-15)
    assert dist.p_zero()[0] == 0.0


def test_enumeration_tie_modes_with_even_votes():
    table = np.array([[0.5], [0.5]])
    ternary = enumerate_vote_distribution(table, option=1, tie_mode="ternary")
    assert ternary.p_zero()[0] == pytest.approx(0.5, abs=1e-15)
    plus = enumerate_vote_distribution(table, option=1, tie_mode="plus_one")
    assert plus.p_zero()[0] == 0.0
    assert plus.p_plus()[0] == pytest.approx(0.75, abs=1e-15)


def test_enumeration_marginals_sum_to_one():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        d = int(rng.integers(1, 5))
        dist = enumerate_vote_distribution(rng.random((n, d)), option=int(rng.integers(1, 3)))
        assert np.all(np.abs(dist.probs.sum(axis=1) - 1.0) <= 1e-12)


def test_enumeration_rejects_oversized_or_invalid_tables():
    with pytest.raises(ValueError):
        enumerate_vote_distribution(np.full((21, 1), 0.5), option=1)
    with pytest.raises(ValueError):
        enumerate_vote_distribution(np.array([[1.5]]), option=1)
    with pytest.raises(ValueError):
        enumerate_vote_distribution(np.array([[0.5]]), option=3)


def test_svrg_reference_trivial_cases():
    p = make_finite_sum_quadratic(4, 3, seed=1)
    snap = np.ones(4)
    assert np.allclose(svrg_reference_estimator(p, snap, snap, 1), p.full_grad(snap), atol=1e-14)
    single = make_finite_sum_quadratic(4, 1, seed=2)
    x = np.array([0.5, -1.0, 2.0, 0.0])
    assert np.allclose(svrg_reference_estimator(single, x, np.ones(4), 0),
                       single.full_grad(x), atol=1e-14)
    with pytest.raises(IndexError):
        svrg_reference_estimator(p, snap, snap, 3)


def test_svrg_reference_equals_estimator_at_beta_one():
    rng = RngStream(3)
    p = make_finite_sum_quadratic(5, 6, seed=4)
    for k in range(100):
        r = rng.fork("case", k)
        x_t, x_prev, snap, v_prev = (r.normal(5) for _ in range(4))
        i = int(r.integers(6))
        ref = svrg_reference_estimator(p, x_t, snap, i)
        ours = fs_estimator_update(v_prev, x_t, x_prev, snap, p.full_grad(snap), i, p, beta=1.0)
        assert np.max(np.abs(ref - ours)) <= 1e-12


def test_mc_expectation_deterministic_sampler():
    mean, stderr = mc_expectation(lambda r: np.array([2.0, -1.0]), 100, RngStream(0))
    assert np.array_equal(mean, [2.0, -1.0])
    assert np.array_equal(stderr, [0.0, 0.0])


def test_mc_expectation_fair_coin():
    rng = RngStream(5).fork("coin")
    mean, stderr = mc_expectation(lambda r: 1.0 if r.random() < 0.5 else -1.0, 100_000, rng)
    assert abs(mean) <= 4.0 / np.sqrt(100_000)
    assert stderr == pytest.approx(1.0 / np.sqrt(100_000), rel=0.05)


def test_mc_expectation_of_randomized_sign():
    rng = RngStream(6).fork("ss")
    mean, stderr = mc_expectation(
        lambda r: stochastic_sign(np.array([0.5]), 1.0, r).to_signs().astype(float),
        50_000, rng)
    assert abs(mean[0] - 0.5) <= 4.0 * stderr[0]


def test_mc_expectation_needs_two_draws():
    with pytest.raises(ValueError):
        mc_expectation(lambda r: 0.0, 1, RngStream(0))


def test_run_all_checks_passes():
    results = run_all_checks()
    failures = [(name, detail) for name, ok, detail in results if not ok]
    assert failures == []
    assert len(results) >= 10
