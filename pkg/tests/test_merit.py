"""Merit function, gradient split, KKT residual, and the norm lemmas."""
from fractions import Fraction

import numpy as np
import pytest

from stochsqp import get_problem
from stochsqp.merit import (
    Iterate,
    OutOfPerturbedSet,
    PenaltyParams,
    eval_a,
    eval_merit,
    eval_merit_gradient,
    eval_q,
    eval_w,
    kkt_residual,
)
from stochsqp.problems import ProblemDef

from conftest import merit_fd_gradient, sample_smooth_point


def _unconstrained_quadratic():
    def no_c(x):
        return np.zeros(0)

    def no_jc(x):
        return np.zeros((0, 2))

    def bad(x, i):
        raise IndexError

    return ProblemDef(
        name="toy-unconstrained",
        dim_x=2, dim_eq=0, dim_ineq=0,
        eval_f=lambda x: float(x @ x),
        eval_grad_f=lambda x: 2.0 * x,
        eval_hess_f=lambda x: 2.0 * np.eye(2),
        eval_c=no_c, eval_jac_c=no_jc,
        eval_g=no_c, eval_jac_g=no_jc,
        eval_hess_c_i=bad, eval_hess_g_i=bad,
        x0=np.zeros(2), mu0=np.zeros(0), lambda0=np.zeros(0),
    )


# ------------------------------------------------------------------
# scalar pieces
# ------------------------------------------------------------------

@pytest.mark.parametrize("g, expected", [
    ([-1.0, -2.0], 0.0),
    ([2.0, 0.0, -3.0], 8.0),
    ([0.5, 0.5], 0.25),
])
def test_eval_a(g, expected):
    assert eval_a(np.array(g)) == pytest.approx(expected, abs=0)


@pytest.mark.parametrize("a, lam, nu, expected", [
    (0.0, [], 2.0, 2.0),
    (1.0, [1.0, 1.0], 3.0, 2.0 / 3.0),
    (1.0, [], 2.0, 1.0),
])
def test_eval_q(a, lam, nu, expected):
    assert eval_q(a, np.array(lam), nu) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("g, lam, eps_q, expected_w", [
    ([0.0, -1.0], [2.0, 0.0], 0.7, [0.0, 0.0]),
    ([1.0], [-1.0], 1.0, [1.0]),
    ([-1.0], [2.0], 0.5, [-1.0]),
])
def test_eval_w(g, lam, eps_q, expected_w):
    w, b = eval_w(np.array(g), np.array(lam), eps_q)
    assert np.allclose(w, expected_w, atol=0)
    assert np.allclose(b, np.array(g) - w, atol=0)


def test_w_two_formulas_agree():
    # g - min(0, g + eps_q lam) == max(g, -eps_q lam) up to one rounding
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = rng.normal(size=6)
        lam = rng.normal(size=6)
        eps_q = rng.uniform(0.01, 3.0)
        w, b = eval_w(g, lam, eps_q)
        assert np.array_equal(w, np.maximum(g, -eps_q * lam))
        scale = max(1.0, np.abs(g).max(), eps_q * np.abs(lam).max())
        assert np.abs(w - (g - b)).max() <= 1e-15 * scale


# ------------------------------------------------------------------
# merit value
# ------------------------------------------------------------------

def test_merit_unconstrained_reduces_to_objective():
    p = _unconstrained_quadratic()
    it = Iterate(np.array([1.0, -2.0]), np.zeros(0), np.zeros(0))
    ev = eval_merit(p, it, PenaltyParams(0.3, 2.0, 5.0), fbar=17.25)
    assert ev.value == 17.25


def _p1_merit_exact(x: Fraction, lam: Fraction, eps: Fraction, nu: Fraction, eta: Fraction) -> Fraction:
    """Literal transcription of the merit display for the 1-d problem
    min x^2 s.t. 1 - x <= 0, evaluated in exact rational arithmetic."""
    g = 1 - x
    a = max(g, Fraction(0)) ** 3
    assert a <= nu / 2
    q = (nu - a) / (1 + lam * lam)
    b = min(Fraction(0), g + eps * q * lam)
    grad_l = 2 * x - lam              # grad f + G^T lam with G = (-1)
    v = -grad_l + g * g * lam         # G grad_l + diag(g)^2 lam
    return (
        x * x + lam * g
        + (g * g - b * b) / (2 * eps * q)
        + eta / 2 * v * v
    )


@pytest.mark.parametrize("x, lam", [
    # dyadic rationals: exactly representable, so oracle and implementation
    # see the same point
    (Fraction(1), Fraction(2)),
    (Fraction(1, 2), Fraction(3, 2)),
    (Fraction(2), Fraction(1, 4)),
    (Fraction(1, 4), Fraction(-1, 2)),  # violated constraint, negative dual
])
def test_merit_matches_exact_rational_oracle(x, lam):
    p = get_problem("p1")
    eps, nu, eta = Fraction(1), Fraction(2), Fraction(1)
    expected = float(_p1_merit_exact(x, lam, eps, nu, eta))
    it = Iterate(np.array([float(x)]), np.zeros(0), np.array([float(lam)]))
    got = eval_merit(p, it, PenaltyParams(1.0, 2.0, 1.0)).value
    assert got == pytest.approx(expected, rel=1e-12, abs=1e-12)


def test_merit_value_at_kkt_equals_objective(suite):
    # c = 0, w = 0, |g|^2 = |b|^2, and diag(g)^2 lam = 0 by complementarity
    for p in suite:
        x_star, mu_star, lam_star = p.known_kkt
        it = Iterate(x_star, mu_star, lam_star)
        ev = eval_merit(p, it, PenaltyParams(1.0, 2.0, 1.0))
        assert ev.value == pytest.approx(p.eval_f(x_star), rel=1e-12, abs=1e-12), p.name


def test_merit_outside_perturbed_set_raises():
    p = get_problem("p1")
    it = Iterate(np.array([-2.0]), np.zeros(0), np.array([0.0]))  # g = 3, a = 27
    with pytest.raises(OutOfPerturbedSet) as err:
        eval_merit(p, it, PenaltyParams(1.0, 2.0, 1.0))
    assert err.value.a_x == pytest.approx(27.0)
    # gradient precondition is weaker: a < nu
    eval_merit_gradient(p, it, PenaltyParams(1.0, 28.0, 1.0))
    with pytest.raises(OutOfPerturbedSet):
        eval_merit_gradient(p, it, PenaltyParams(1.0, 27.0, 1.0))


def test_merit_boundary_point_is_inside():
    # a(x) = nu/2 exactly still counts as inside the perturbed set
    p = get_problem("p1")
    it = Iterate(np.array([0.0]), np.zeros(0), np.array([0.0]))  # g = 1, a = 1
    ev = eval_merit(p, it, PenaltyParams(1.0, 2.0, 1.0))
    assert ev.in_T_nu


# ------------------------------------------------------------------
# merit gradient
# ------------------------------------------------------------------

def test_gradient_unconstrained_is_objective_gradient():
    p = _unconstrained_quadratic()
    it = Iterate(np.array([0.25, -1.0]), np.zeros(0), np.zeros(0))
    gradbar = np.array([3.0, -4.0])
    mg = eval_merit_gradient(p, it, PenaltyParams(1.0, 2.0, 1.0), gradbar=gradbar,
                             hessbar=np.zeros((2, 2)))
    assert np.array_equal(mg.full(), gradbar)


def test_gradient_matches_fd_on_p1():
    p = get_problem("p1")
    it = Iterate(np.array([1.0]), np.zeros(0), np.array([2.0]))
    params = PenaltyParams(1.0, 2.0, 1.0)
    ana = eval_merit_gradient(p, it, params).full()
    num = merit_fd_gradient(p, it, params)
    assert np.abs(ana - num).max() <= 1e-6 * max(1.0, np.abs(ana).max())


@pytest.mark.parametrize("eps, nu, eta", [(1.0, 2.0, 1.0), (0.01, 8.0, 1.0)])
def test_gradient_matches_fd_on_suite(suite, eps, nu, eta):
    params = PenaltyParams(eps, nu, eta)
    rng = np.random.default_rng(42)
    for p in suite:
        for _ in range(20):
            it = sample_smooth_point(p, params, rng)
            ana = eval_merit_gradient(p, it, params).full()
            num = merit_fd_gradient(p, it, params)
            rel = np.abs(ana - num).max() / max(1.0, np.abs(ana).max())
            assert rel <= 1e-6, (p.name, rel)


def test_split_identity(suite):
    # part1 + part2 reproduces the full gradient
    rng = np.random.default_rng(5)
    params = PenaltyParams(0.5, 4.0, 2.0)
    for p in suite:
        for _ in range(20):
            it = sample_smooth_point(p, params, rng)
            mg = eval_merit_gradient(p, it, params)
            full = mg.full()
            dev = np.abs(mg.part1 + mg.part2 - full).max()
            assert dev <= 1e-12 * max(1.0, np.abs(full).max()), p.name


def test_m_matrix_definition(suite):
    rng = np.random.default_rng(6)
    params = PenaltyParams(1.0, 4.0, 1.0)
    for p in suite:
        it = sample_smooth_point(p, params, rng)
        mg = eval_merit_gradient(p, it, params)
        J = p.eval_jac_c(it.x)
        G = p.eval_jac_g(it.x)
        g = p.eval_g(it.x)
        m = p.dim_eq
        assert np.allclose(mg.M[:m, :m], J @ J.T, atol=1e-14)
        assert np.allclose(mg.M[:m, m:], J @ G.T, atol=1e-14)
        assert np.allclose(mg.M[m:, m:], G @ G.T + np.diag(g**2), atol=1e-14)
        assert np.array_equal(mg.M, mg.M.T)
        assert np.linalg.eigvalsh(mg.M).min() >= -1e-10  # PSD


# ------------------------------------------------------------------
# KKT residual
# ------------------------------------------------------------------

@pytest.mark.parametrize("x, lam, expected", [
    (1.0, 2.0, 0.0),   # stationarity 2x - lam = 0, g = 0, max(0, -2) = 0
    (0.0, 0.0, 1.0),   # grad L = 0, max(1, 0) = 1
    (1.0, 0.0, 2.0),   # grad L = 2, max(0, 0) = 0
])
def test_kkt_residual_p1(x, lam, expected):
    p = get_problem("p1")
    it = Iterate(np.array([x]), np.zeros(0), np.array([lam]))
    assert kkt_residual(p, it) == pytest.approx(expected, abs=1e-15)


# ------------------------------------------------------------------
# lemma-style properties
# ------------------------------------------------------------------

def test_lemma_zero_w_iff_kkt_inequalities():
    rng = np.random.default_rng(10)
    r = 5
    for _ in range(10_000):
        eps_q = rng.uniform(1e-3, 10.0)
        # forward: construct (g, lam) satisfying the KKT inequality conditions
        g = np.where(rng.random(r) < 0.5, -rng.uniform(0.01, 3.0, r), 0.0)
        lam = np.where(g == 0.0, rng.uniform(0.0, 3.0, r), 0.0)
        w, _ = eval_w(g, lam, eps_q)
        assert np.all(w == 0.0)
        # reverse: fuzzed pairs with w = 0 must satisfy the conditions
        g2 = rng.normal(size=r)
        lam2 = rng.normal(size=r)
        w2, _ = eval_w(g2, lam2, eps_q)
        if np.all(w2 == 0.0):
            assert np.all(g2 <= 0.0) and np.all(lam2 >= 0.0) and lam2 @ g2 == 0.0


def test_lemma_scalar_max_inequality():
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(2, 10_000))
    c = rng.uniform(1e-3, 10.0, 10_000)
    lhs = np.abs(np.maximum(a, b))
    rhs = np.abs(np.maximum(a, c * b)) / np.minimum(c, 1.0)
    assert np.all(lhs <= rhs * (1.0 + 1e-12))


def test_lemma_w_sandwich():
    # |w| / (eps_q v 1) <= |max(g, -lam)| <= |w| / (eps_q ^ 1)
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        r = rng.integers(1, 6)
        g = rng.normal(size=r)
        lam = rng.normal(size=r)
        eps_q = rng.uniform(1e-3, 10.0)
        w, _ = eval_w(g, lam, eps_q)
        wn = np.linalg.norm(w)
        comp = np.linalg.norm(np.maximum(g, -lam))
        assert wn / max(eps_q, 1.0) <= comp * (1.0 + 1e-12)
        assert comp <= wn / min(eps_q, 1.0) * (1.0 + 1e-12)


def test_q_bounds_on_perturbed_set():
    rng = np.random.default_rng(13)
    for _ in range(10_000):
        nu = rng.uniform(0.1, 10.0)
        a = rng.uniform(0.0, nu / 2.0)  # inside T_nu
        lam = rng.normal(size=rng.integers(0, 5))
        q = eval_q(a, lam, nu)
        lo = nu / (2.0 * (1.0 + lam @ lam))
        assert lo * (1.0 - 1e-12) <= q <= nu * (1.0 + 1e-12)


def test_lemma_merit_stationarity_at_kkt(suite):
    # |c| = |w| = |grad merit| = 0 and R = 0 at each hand-derived KKT point
    params = PenaltyParams(1.0, 2.0, 1.0)
    for p in suite:
        x_star, mu_star, lam_star = p.known_kkt
        it = Iterate(x_star, mu_star, lam_star)
        assert np.linalg.norm(p.eval_c(x_star)) <= 1e-10
        q = eval_q(eval_a(p.eval_g(x_star)), lam_star, params.nu)
        w, _ = eval_w(p.eval_g(x_star), lam_star, params.epsilon * q)
        assert np.linalg.norm(w) <= 1e-10
        mg = eval_merit_gradient(p, it, params)
        assert np.linalg.norm(mg.full()) <= 1e-10, p.name
        assert kkt_residual(p, it) <= 1e-10
