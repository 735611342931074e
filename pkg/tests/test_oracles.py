import numpy as np
import pytest

from signvr.core import RngStream
from signvr.oracles import (
    FiniteSumStochastic,
    make_finite_sum_quadratic,
    make_noisy_quadratic,
    make_nonconvex_logistic,
    make_sign_conflict_pair,
    partition_heterogeneous,
)
from signvr.verify import finite_diff_grad, relative_fd_step


def test_quadratic_gradient_vanishes_at_minimizer():
    q = make_noisy_quadratic(8, 25.0, 0.0, seed=1)
    assert np.allclose(q.grad_true(q.x_star), 0.0)
    assert q.loss(q.x_star) == 0.0


def test_quadratic_noiseless_sampling_is_exact():
    q = make_noisy_quadratic(5, 3.0, 0.0, seed=2)
    rng = RngStream(0)
    x = np.ones(5)
    assert np.array_equal(q.grad_sample(x, rng), q.grad_true(x))


def test_quadratic_sample_mean_converges_to_true_gradient():
    q = make_noisy_quadratic(5, 10.0, 2.0, seed=3)
    rng = RngStream(1).fork("mc")
    x = np.linspace(-1, 1, 5)
    N = 100_000
    draws = np.array([q.grad_sample(x, rng) for _ in range(N)])
    # total noise variance sigma^2 spreads evenly over coordinates
    per_coord_sigma = q.noise_sigma / np.sqrt(q.dim)
    tol = 4.0 * per_coord_sigma / np.sqrt(N)
    assert np.all(np.abs(draws.mean(axis=0) - q.grad_true(x)) <= tol)


def test_quadratic_paired_samples_share_noise():
    q = make_noisy_quadratic(6, 5.0, 1.0, seed=4)
    rng = RngStream(2).fork("pair")
    xa, xb = np.ones(6), -np.ones(6)
    ga, gb = q.grad_sample_pair(xa, xb, rng)
    # the common draw cancels in the difference
    assert np.allclose(ga - gb, q.grad_true(xa) - q.grad_true(xb), atol=1e-12)


def test_uniform_noise_respects_certified_bound():
    q = make_noisy_quadratic(4, 2.0, 1.5, seed=5, noise_kind="uniform")
    rng = RngStream(3).fork("u")
    for _ in range(2000):
        eps = q.grad_sample(q.x_star, rng)
        assert np.max(np.abs(eps)) <= q.noise_halfwidth + 1e-15


def test_finite_sum_single_component_is_the_full_gradient():
    p = make_finite_sum_quadratic(6, 1, seed=6)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(size=6)
        assert np.array_equal(p.component_grad(0, x), p.full_grad(x))


def test_finite_sum_full_gradient_is_component_mean():
    p = make_finite_sum_quadratic(5, 9, seed=7)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.normal(size=5) * 3.0
        mean_g = np.mean([p.component_grad(i, x) for i in range(p.m)], axis=0)
        full = p.full_grad(x)
        denom = 1.0 + np.max(np.abs(full))
        assert np.max(np.abs(mean_g - full)) / denom <= 1e-12


@pytest.mark.parametrize("factory", [
    lambda: make_finite_sum_quadratic(5, 7, seed=8),
    lambda: make_nonconvex_logistic(6, 30, reg_lambda=0.1, seed=9),
])
def test_finite_difference_agreement(factory):
    p = factory()
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.normal(size=p.dim) * 2.0
        fd = finite_diff_grad(p.loss, x, relative_fd_step(x))
        g = p.full_grad(x)
        assert np.max(np.abs(fd - g)) / (1.0 + np.max(np.abs(g))) <= 1e-5


def test_logistic_component_gradient_at_origin():
    p = make_nonconvex_logistic(4, 10, reg_lambda=0.0, seed=10)
    x0 = np.zeros(4)
    for i in range(p.m):
        expect = -p.y[i] * p.A[i] / 2.0
        assert np.allclose(p.component_grad(i, x0), expect, atol=1e-15)


def test_logistic_regularizer_gradient_zero_at_origin():
    p = make_nonconvex_logistic(3, 5, reg_lambda=0.7, seed=11)
    reg_only = p.component_grad(0, np.zeros(3)) - (-p.y[0] * p.A[0] / 2.0)
    assert np.allclose(reg_only, 0.0)


def test_logistic_loss_is_finite_for_large_margins():
    p = make_nonconvex_logistic(3, 5, reg_lambda=0.1, seed=12)
    assert np.isfinite(p.loss(np.full(3, 100.0)))
    assert np.isfinite(p.loss(np.full(3, -100.0)))


def test_finite_sum_stochastic_wrapper_samples_components():
    p = make_finite_sum_quadratic(4, 6, seed=13)
    oracle = FiniteSumStochastic(p)
    rng = RngStream(4).fork("w")
    x = np.ones(4)
    g = oracle.grad_sample(x, rng)
    matches = [np.allclose(g, p.component_grad(i, x)) for i in range(p.m)]
    assert sum(matches) == 1
    ga, gb = oracle.grad_sample_pair(x, 2 * x, rng)
    same_i = [np.allclose(ga, p.component_grad(i, x)) and np.allclose(gb, p.component_grad(i, 2 * x))
              for i in range(p.m)]
    assert any(same_i)


def test_partition_homogeneous_limit():
    part = partition_heterogeneous(n=5, d=6, heterogeneity=0.0, seed=14, sigma=0.0)
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = rng.normal(size=6) * 2.0
        grads = [part.node_oracle(j).grad_true(x) for j in range(5)]
        for g in grads[1:]:
            assert np.array_equal(g, grads[0])


def test_partition_global_gradient_is_node_mean():
    part = partition_heterogeneous(n=4, d=5, heterogeneity=1.0, seed=15, sigma=0.0)
    rng = np.random.default_rng(4)
    for _ in range(30):
        x = rng.normal(size=5)
        mean_g = np.mean([part.node_oracle(j).grad_true(x) for j in range(4)], axis=0)
        glob = part.global_grad_true(x)
        assert np.max(np.abs(mean_g - glob)) / (1.0 + np.max(np.abs(glob))) <= 1e-12


def test_sign_conflict_pair_geometry():
    part = make_sign_conflict_pair(d=2)
    origin = np.zeros(2)
    assert np.allclose(part.global_grad_true(origin), 0.0)
    g0 = part.node_oracle(0).grad_true(origin)
    g1 = part.node_oracle(1).grad_true(origin)
    assert np.allclose(g0, [-1.0, 0.0])
    assert np.allclose(g1, [1.0, 0.0])


def test_partition_certified_bounds_hold_on_envelope():
    part = partition_heterogeneous(n=3, d=4, heterogeneity=0.8, seed=16, sigma=0.4,
                                   noise_kind="uniform", rho=2.5)
    rng = RngStream(5).fork("env")
    for _ in range(200):
        x = rng.normal(4)
        x *= rng.random() * part.rho / max(np.linalg.norm(x), 1e-12)
        assert part.in_envelope(x)
        for j in range(3):
            node = part.node_oracle(j)
            assert np.linalg.norm(node.grad_true(x)) <= part.bound_g2 + 1e-12
            sample = node.grad_sample(x, rng)
            assert np.max(np.abs(sample)) <= part.bound_ginf_sample + 1e-12


def test_partition_gaussian_noise_has_no_finite_sample_bound():
    part = partition_heterogeneous(n=2, d=3, heterogeneity=0.5, seed=17, sigma=1.0,
                                   noise_kind="gaussian")
    assert part.bound_ginf_sample == np.inf
    assert np.isfinite(part.bound_g2)


def test_invalid_parameters_raise():
    with pytest.raises(ValueError):
        make_noisy_quadratic(0)
    with pytest.raises(ValueError):
        make_noisy_quadratic(3, condition_number=0.5)
    with pytest.raises(ValueError):
        make_noisy_quadratic(3, sigma=-1.0)
    with pytest.raises(ValueError):
        make_finite_sum_quadratic(3, 0)
    with pytest.raises(ValueError):
        make_nonconvex_logistic(3, 10, reg_lambda=-0.1)
    with pytest.raises(ValueError):
        partition_heterogeneous(0, 3, 1.0)
    with pytest.raises(ValueError):
        partition_heterogeneous(2, 3, -1.0)
