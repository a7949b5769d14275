"""Problem oracles, noise model, and built-in suite."""
import numpy as np
import pytest

from stochsqp import NoiseModel, builtin_suite, get_problem, kkt_residual, sample_batch
from stochsqp.merit import Iterate

from conftest import central_diff_grad, central_diff_jac


def test_zero_noise_is_exact_passthrough():
    p = get_problem("p1")  # objective x^2
    x = np.array([3.0])
    for n in (1, 7, 1000):
        b = sample_batch(p, NoiseModel(0.0, 123), x, n, (1, 0, 0))
        assert b.fbar == 9.0
        assert b.gradbar[0] == 6.0
        assert b.hessbar[0, 0] == 2.0


def test_batch_mean_concentrates():
    # CLT bound: |fbar - f| <= 5 sigma / sqrt(n) with probability >= 0.99
    p = get_problem("p1")
    b = sample_batch(p, NoiseModel(1.0, 2024), np.array([3.0]), 10**6, (1, 0, 0))
    assert abs(b.fbar - 9.0) <= 5.0 / np.sqrt(10**6)


def test_gradient_noise_covariance():
    # covariance of gradbar - grad at n=1 must be sigma2 * (I + 11^T)
    p = get_problem("p2")
    x = np.array([0.3, -0.7])
    grad = p.eval_grad_f(x)
    noise = NoiseModel(1.0, 77)
    draws = np.array([
        sample_batch(p, noise, x, 1, (1, t, 0)).gradbar - grad
        for t in range(100_000)
    ])
    cov = np.cov(draws.T)
    target = np.array([[2.0, 1.0], [1.0, 2.0]])
    assert np.all(np.abs(cov - target) <= 0.05 * np.abs(target))


def test_hessian_samples_are_symmetric():
    p = get_problem("p2")
    b = sample_batch(p, NoiseModel(2.5, 5), np.array([0.1, 0.2]), 3, (1, 0, 0))
    assert np.array_equal(b.hessbar, b.hessbar.T)


def test_sample_variance_scales_with_batch_size():
    p = get_problem("p1")
    x = np.array([3.0])
    noise = NoiseModel(4.0, 31)
    for n, tol in ((1, 0.1), (16, 0.1)):
        devs = np.array([
            sample_batch(p, noise, x, n, (3, t, 0)).fbar - 9.0 for t in range(20_000)
        ])
        assert abs(np.var(devs) - 4.0 / n) <= tol * 4.0 / n


def test_reproducibility_bit_identical():
    p = get_problem("p3")
    noise = NoiseModel(0.5, 99)
    x = np.array([0.4, 0.6])
    a = sample_batch(p, noise, x, 11, (4, 8, 15))
    b = sample_batch(p, noise, x, 11, (4, 8, 15))
    assert a.fbar == b.fbar
    assert np.array_equal(a.gradbar, b.gradbar)
    assert np.array_equal(a.hessbar, b.hessbar)


def test_distinct_streams_uncorrelated():
    p = get_problem("p1")
    x = np.array([3.0])
    noise = NoiseModel(1.0, 7)
    a = np.array([sample_batch(p, noise, x, 1, (1, t, 0)).fbar for t in range(100_000)])
    b = np.array([sample_batch(p, noise, x, 1, (2, t, 0)).fbar for t in range(100_000)])
    rho = np.corrcoef(a, b)[0, 1]
    assert abs(rho) <= 0.01


def test_nonfinite_point_rejected():
    p = get_problem("p1")
    with pytest.raises(ValueError):
        sample_batch(p, NoiseModel(0.0, 0), np.array([np.nan]), 1, (1, 0, 0))
    with pytest.raises(ValueError):
        sample_batch(p, NoiseModel(0.0, 0), np.array([1.0]), 0, (1, 0, 0))


# ------------------------------------------------------------------
# built-in suite
# ------------------------------------------------------------------

def test_suite_shape(suite):
    assert len(suite) >= 6
    for p in suite:
        assert p.dim_x <= 10
        assert p.dim_ineq >= 1
        assert p.known_kkt is not None
        x_star, mu_star, lam_star = p.known_kkt
        assert x_star.shape == (p.dim_x,)
        assert mu_star.shape == (p.dim_eq,)
        assert lam_star.shape == (p.dim_ineq,)


def test_p1_kkt_point():
    p = get_problem("p1")
    x_star, _, lam_star = p.known_kkt
    assert x_star[0] == 1.0 and lam_star[0] == 2.0


def test_p4_inactive_multiplier_is_zero():
    p = get_problem("p4")
    x_star, _, lam_star = p.known_kkt
    assert p.eval_g(x_star)[0] < 0
    assert lam_star[0] == 0.0


def test_suite_kkt_residual_vanishes(suite):
    for p in suite:
        x_star, mu_star, lam_star = p.known_kkt
        assert kkt_residual(p, Iterate(x_star, mu_star, lam_star)) <= 1e-10, p.name


def test_hessians_symmetric_everywhere(suite):
    rng = np.random.default_rng(11)
    for p in suite:
        for _ in range(5):
            x = rng.uniform(-2, 2, p.dim_x)
            h = p.eval_hess_f(x)
            assert np.array_equal(h, h.T), p.name


@pytest.mark.parametrize("seed", [0, 1])
def test_finite_difference_consistency(suite, seed):
    # f vs grad (rel err <= 1e-5), grad vs hess (rel err <= 1e-4), 20 points
    rng = np.random.default_rng(seed)
    for p in suite:
        for _ in range(10):
            x = rng.uniform(-2, 2, p.dim_x)
            grad = p.eval_grad_f(x)
            fd = central_diff_grad(p.eval_f, x)
            assert np.abs(fd - grad).max() <= 1e-5 * max(1.0, np.abs(grad).max()), p.name
            hess = p.eval_hess_f(x)
            fd_h = central_diff_jac(p.eval_grad_f, x, h=1e-5)
            assert np.abs(fd_h - hess).max() <= 1e-4 * max(1.0, np.abs(hess).max()), p.name


def test_constraint_jacobians_match_fd(suite):
    rng = np.random.default_rng(3)
    for p in suite:
        for _ in range(5):
            x = rng.uniform(-2, 2, p.dim_x)
            if p.dim_eq:
                fd = central_diff_jac(p.eval_c, x)
                assert np.abs(fd - p.eval_jac_c(x)).max() <= 1e-5 * max(1.0, np.abs(fd).max())
            fd = central_diff_jac(p.eval_g, x)
            assert np.abs(fd - p.eval_jac_g(x)).max() <= 1e-5 * max(1.0, np.abs(fd).max())


def test_constraint_hessians_match_fd(suite):
    rng = np.random.default_rng(4)
    for p in suite:
        x = rng.uniform(-2, 2, p.dim_x)
        for i in range(p.dim_eq):
            fd = central_diff_jac(lambda z: p.eval_jac_c(z)[i], x, h=1e-5)
            assert np.abs(fd - p.eval_hess_c_i(x, i)).max() <= 1e-4
        for i in range(p.dim_ineq):
            fd = central_diff_jac(lambda z: p.eval_jac_g(z)[i], x, h=1e-5)
            assert np.abs(fd - p.eval_hess_g_i(x, i)).max() <= 1e-4


def test_registry_roundtrip(suite):
    for p in suite:
        assert get_problem(p.name).name == p.name
    with pytest.raises(KeyError):
        get_problem("nope")
