"""Shared fixtures and independent oracles for the test suite."""
from __future__ import annotations

import numpy as np
import pytest

from stochsqp import builtin_suite, sample_batch, solve_sqp_system
from stochsqp.directions import identify_active_set
from stochsqp.merit import Iterate, eval_a, eval_merit, eval_q


@pytest.fixture(scope="session")
def suite():
    return builtin_suite()


def central_diff_grad(fn, x, h=1e-6):
    """Independent first-derivative oracle: central differences of a scalar fn."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


def central_diff_jac(fn, x, h=1e-6):
    """Central-difference Jacobian of a vector-valued fn."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.asarray(fn(xp)) - np.asarray(fn(xm))) / (2.0 * h))
    return np.stack(cols, axis=-1)


def merit_fd_gradient(problem, it, p, h=1e-6):
    """Finite-difference gradient of the merit value over the stacked triple."""
    d, m = problem.dim_x, problem.dim_eq

    def value(z):
        return eval_merit(problem, Iterate(z[:d], z[d:d + m], z[d + m:]), p).value

    return central_diff_grad(value, it.stacked(), h=h)


def sample_smooth_point(problem, p, rng, span=2.0, kink_gap=1e-4):
    """Random iterate inside T_nu and away from the max-kink set."""
    d, m, r = problem.dim_x, problem.dim_eq, problem.dim_ineq
    while True:
        x = rng.uniform(-span, span, d)
        mu = rng.uniform(-span, span, m)
        lam = rng.uniform(-span, span, r)
        g = problem.eval_g(x)
        a_x = eval_a(g)
        if a_x > p.nu / 2.0 - 1e-3:
            continue
        q = eval_q(a_x, lam, p.nu)
        if r and np.any(np.abs(g + p.epsilon * q * lam) < kink_gap):
            continue
        return Iterate(x, mu, lam)


def local_style_direction(problem, noise, it, eps, nu, t):
    """One direction of the prescribed-stepsize scheme: grad_x L from one
    sample, Q matrices from an independent one."""
    b1 = sample_batch(problem, noise, it.x, 1, (1, t, 0))
    b2 = sample_batch(problem, noise, it.x, 1, (2, t, 0))
    g = problem.eval_g(it.x)
    q = eval_q(eval_a(g), it.lam, nu)
    aset = identify_active_set(g, it.lam, eps * q)
    return solve_sqp_system(problem, it, aset, np.eye(problem.dim_x),
                            b1.gradbar, b2.hessbar, gradbar_for_q=b2.gradbar)


def direction_mc_check(problem, it, eps, nu, sigma2, n_draws, seed=0, se_mult=4.0):
    """Monte Carlo unbiasedness check of the stochastic direction.

    Returns (ok, mean, exact, allowance): componentwise |mean - exact| vs
    se_mult standard errors.
    """
    from stochsqp.problems import NoiseModel

    exact_dir = local_style_direction(problem, NoiseModel(0.0, 0), it, eps, nu, 0)
    assert exact_dir.solvable
    exact = exact_dir.stacked()

    noise = NoiseModel(sigma2, seed)
    total = np.zeros_like(exact)
    total_sq = np.zeros_like(exact)
    for t in range(n_draws):
        d = local_style_direction(problem, noise, it, eps, nu, t)
        assert d.solvable
        vec = d.stacked()
        total += vec
        total_sq += vec**2
    mean = total / n_draws
    var = total_sq / n_draws - mean**2
    se = np.sqrt(np.maximum(var, 0.0) / n_draws)
    allowance = se_mult * se
    return bool(np.all(np.abs(mean - exact) <= allowance)), mean, exact, allowance
