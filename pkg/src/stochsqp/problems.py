"""Problem definitions, exact derivative oracles, and the Gaussian noise oracle.

A problem is a smooth NLP

    min f(x)   s.t.  c(x) = 0,  g(x) <= 0,

with dense derivative callbacks up to second order.  The stochastic oracle
injects additive Gaussian noise on the exact values: f ~ N(f, s2),
grad ~ N(grad, s2*(I + 11^T)), and hess entrywise ~ N(hess_ij, s2), with the
Hessian samples symmetrized.  A built-in suite of small problems with
hand-derived KKT points backs the benchmark CLI and the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

Array = np.ndarray


# ------------------------------------------------------------------
# problem container
# ------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemDef:
    """Smooth NLP with exact derivative oracles.

    ``eval_c``/``eval_jac_c`` must return shapes ``(m,)``/``(m, d)`` and the
    inequality counterparts ``(r,)``/``(r, d)``; zero-sized arrays are used
    when a constraint block is absent.  ``eval_hess_c_i(x, i)`` returns the
    d-by-d Hessian of the i-th equality constraint (similarly for ``g``).
    ``known_kkt``, when present, is a hand-derived primal-dual solution
    ``(x*, mu*, lambda*)``.
    """

    name: str
    dim_x: int
    dim_eq: int
    dim_ineq: int
    eval_f: Callable[[Array], float]
    eval_grad_f: Callable[[Array], Array]
    eval_hess_f: Callable[[Array], Array]
    eval_c: Callable[[Array], Array]
    eval_jac_c: Callable[[Array], Array]
    eval_g: Callable[[Array], Array]
    eval_jac_g: Callable[[Array], Array]
    eval_hess_c_i: Callable[[Array, int], Array]
    eval_hess_g_i: Callable[[Array, int], Array]
    x0: Array = field(repr=False, default=None)
    mu0: Array = field(repr=False, default=None)
    lambda0: Array = field(repr=False, default=None)
    known_kkt: Optional[tuple[Array, Array, Array]] = field(repr=False, default=None)

    def lagrangian_hessian(self, x: Array, mu: Array, lam: Array) -> Array:
        """Exact Hessian of the Lagrangian, sum of f/c/g second derivatives."""
        h = np.array(self.eval_hess_f(x), dtype=float, copy=True)
        for i in range(self.dim_eq):
            h += mu[i] * self.eval_hess_c_i(x, i)
        for i in range(self.dim_ineq):
            h += lam[i] * self.eval_hess_g_i(x, i)
        return h


# ------------------------------------------------------------------
# stochastic oracle
# ------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise with variance ``sigma2`` and a 64-bit seed."""

    sigma2: float
    seed: int

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be >= 0")


@dataclass(frozen=True)
class OracleBatch:
    """Means of ``n`` i.i.d. noisy samples of (f, grad f, hess f)."""

    n: int
    fbar: float
    gradbar: Array
    hessbar: Array


_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(x: int) -> int:
    # standard 64-bit finalizer; decorrelates structured stream ids
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def _stream_hash(stream: tuple[int, ...]) -> int:
    h = 0x6A09E667F3BCC908
    for part in stream:
        h = _splitmix64(h ^ _splitmix64(part & _MASK64))
    h2 = _splitmix64(h ^ 0xBB67AE8584CAA73B)
    return h | (h2 << 64)


_rng_cache = __import__("threading").local()


def _rng(seed: int, stream: tuple[int, ...]) -> np.random.Generator:
    """Counter-based generator keyed by (seed, stream).

    One Philox instance per seed is cached (per thread) and its 256-bit
    counter is repositioned to a region derived from the stream hash, so the
    draw is a pure function of (seed, stream) and distinct streams are
    independent.
    """
    cache = getattr(_rng_cache, "by_seed", None)
    if cache is None:
        cache = _rng_cache.by_seed = {}
    entry = cache.get(seed)
    if entry is None:
        bitgen = np.random.Philox(key=int(seed) & _MASK64)
        entry = cache[seed] = (bitgen, np.random.Generator(bitgen), bitgen.state)
    bitgen, gen, state = entry
    h = _stream_hash(stream)
    counter = state["state"]["counter"]
    counter[0] = 0
    counter[1] = h & _MASK64
    counter[2] = (h >> 64) & _MASK64
    counter[3] = 0
    state["buffer_pos"] = 4  # discard any buffered outputs
    bitgen.state = state
    return gen


def _as_stream(stream) -> tuple[int, ...]:
    if isinstance(stream, (int, np.integer)):
        return (int(stream),)
    return tuple(int(s) for s in stream)


def sample_batch(problem: ProblemDef, noise: NoiseModel, x: Array, n: int, stream) -> OracleBatch:
    """Draw a batch of ``n`` noisy oracle samples at ``x`` and return their means.

    Distinct ``stream`` ids give statistically independent batches for the
    same seed.  With ``sigma2 == 0`` the result is bit-identical to the exact
    oracle values for any ``n``.

    The batch mean is drawn directly at its exact distribution: the mean of n
    i.i.d. N(0, v) variables is N(0, v/n), so one scaled draw per quantity
    reproduces the batch mean without materializing n samples.
    """
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("sample_batch requires a finite evaluation point")

    f = float(problem.eval_f(x))
    grad = np.asarray(problem.eval_grad_f(x), dtype=float)
    hess = np.asarray(problem.eval_hess_f(x), dtype=float)
    if noise.sigma2 == 0.0:
        return OracleBatch(n=int(n), fbar=f, gradbar=grad.copy(), hessbar=hess.copy())

    d = problem.dim_x
    rng = _rng(noise.seed, _as_stream(stream))
    scale = np.sqrt(noise.sigma2 / float(n))
    draw = rng.standard_normal(d * d + d + 2)

    fbar = f + scale * draw[0]
    # gradient noise sigma*(z + s*1) has covariance sigma2*(I + 11^T)
    gradbar = grad + scale * (draw[2:d + 2] + draw[1])
    # entrywise Hessian noise, symmetrized per sample; symmetrization commutes
    # with averaging
    e = draw[d + 2:].reshape(d, d)
    hessbar = hess + scale * 0.5 * (e + e.T)
    return OracleBatch(n=int(n), fbar=float(fbar), gradbar=gradbar, hessbar=hessbar)


def merge_batches(a: OracleBatch, b: OracleBatch) -> OracleBatch:
    """Pool two independent batches into one batch of size ``a.n + b.n``."""
    n = a.n + b.n
    wa, wb = a.n / n, b.n / n
    return OracleBatch(
        n=n,
        fbar=wa * a.fbar + wb * b.fbar,
        gradbar=wa * a.gradbar + wb * b.gradbar,
        hessbar=wa * a.hessbar + wb * b.hessbar,
    )


# ------------------------------------------------------------------
# built-in problem suite
# ------------------------------------------------------------------

def _empty_eq(d: int):
    zc = np.zeros(0)
    zj = np.zeros((0, d))

    def eval_c(x, _zc=zc):
        return _zc

    def eval_jac_c(x, _zj=zj):
        return _zj

    def eval_hess_c_i(x, i):
        raise IndexError("problem has no equality constraints")

    return eval_c, eval_jac_c, eval_hess_c_i


def _p1() -> ProblemDef:
    # min x^2  s.t. 1 - x <= 0.  KKT: 2x - lam = 0, 1 - x = 0 -> (x*, lam*) = (1, 2).
    eval_c, eval_jac_c, eval_hess_c_i = _empty_eq(1)
    zero = np.zeros((1, 1))
    return ProblemDef(
        name="p1",
        dim_x=1, dim_eq=0, dim_ineq=1,
        eval_f=lambda x: float(x[0] ** 2),
        eval_grad_f=lambda x: np.array([2.0 * x[0]]),
        eval_hess_f=lambda x: np.array([[2.0]]),
        eval_c=eval_c, eval_jac_c=eval_jac_c,
        eval_g=lambda x: np.array([1.0 - x[0]]),
        eval_jac_g=lambda x: np.array([[-1.0]]),
        eval_hess_c_i=eval_hess_c_i,
        eval_hess_g_i=lambda x, i: zero,
        x0=np.array([3.0]),
        mu0=np.zeros(0),
        lambda0=np.zeros(1),
        known_kkt=(np.array([1.0]), np.zeros(0), np.array([2.0])),
    )


def _p2() -> ProblemDef:
    # min (x1-1)^2 + (x2-2)^2  s.t. x1 + x2 - 2 = 0, -x1 <= 0, -x2 <= 0.
    # On the line the unconstrained minimizer is (0.5, 1.5); both bounds
    # inactive, mu* = 1.
    zero = np.zeros((2, 2))
    return ProblemDef(
        name="p2",
        dim_x=2, dim_eq=1, dim_ineq=2,
        eval_f=lambda x: float((x[0] - 1.0) ** 2 + (x[1] - 2.0) ** 2),
        eval_grad_f=lambda x: np.array([2.0 * (x[0] - 1.0), 2.0 * (x[1] - 2.0)]),
        eval_hess_f=lambda x: 2.0 * np.eye(2),
        eval_c=lambda x: np.array([x[0] + x[1] - 2.0]),
        eval_jac_c=lambda x: np.array([[1.0, 1.0]]),
        eval_g=lambda x: np.array([-x[0], -x[1]]),
        eval_jac_g=lambda x: np.array([[-1.0, 0.0], [0.0, -1.0]]),
        eval_hess_c_i=lambda x, i: zero,
        eval_hess_g_i=lambda x, i: zero,
        x0=np.array([2.0, -1.0]),
        mu0=np.zeros(1),
        lambda0=np.zeros(2),
        known_kkt=(np.array([0.5, 1.5]), np.array([1.0]), np.zeros(2)),
    )


def _p3() -> ProblemDef:
    # min x1 + x2  s.t. x1^2 + x2^2 - 2 <= 0.  Active circle constraint:
    # x* = (-1, -1), lam* = 0.5.
    eval_c, eval_jac_c, eval_hess_c_i = _empty_eq(2)
    return ProblemDef(
        name="p3",
        dim_x=2, dim_eq=0, dim_ineq=1,
        eval_f=lambda x: float(x[0] + x[1]),
        eval_grad_f=lambda x: np.ones(2),
        eval_hess_f=lambda x: np.zeros((2, 2)),
        eval_c=eval_c, eval_jac_c=eval_jac_c,
        eval_g=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 2.0]),
        eval_jac_g=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        eval_hess_c_i=eval_hess_c_i,
        eval_hess_g_i=lambda x, i: 2.0 * np.eye(2),
        x0=np.array([0.5, -0.5]),
        mu0=np.zeros(0),
        lambda0=np.zeros(1),
        known_kkt=(np.array([-1.0, -1.0]), np.zeros(0), np.array([0.5])),
    )


def _p4() -> ProblemDef:
    # min (x1-1)^2 + (x2+1)^2  s.t. x1^2 + x2^2 - 4 <= 0.  Minimizer (1, -1)
    # is interior to the disc, so lam* = 0 on the inactive constraint.
    eval_c, eval_jac_c, eval_hess_c_i = _empty_eq(2)
    return ProblemDef(
        name="p4",
        dim_x=2, dim_eq=0, dim_ineq=1,
        eval_f=lambda x: float((x[0] - 1.0) ** 2 + (x[1] + 1.0) ** 2),
        eval_grad_f=lambda x: np.array([2.0 * (x[0] - 1.0), 2.0 * (x[1] + 1.0)]),
        eval_hess_f=lambda x: 2.0 * np.eye(2),
        eval_c=eval_c, eval_jac_c=eval_jac_c,
        eval_g=lambda x: np.array([x[0] ** 2 + x[1] ** 2 - 4.0]),
        eval_jac_g=lambda x: np.array([[2.0 * x[0], 2.0 * x[1]]]),
        eval_hess_c_i=eval_hess_c_i,
        eval_hess_g_i=lambda x, i: 2.0 * np.eye(2),
        x0=np.array([2.0, -2.0]),
        mu0=np.zeros(0),
        lambda0=np.zeros(1),
        known_kkt=(np.array([1.0, -1.0]), np.zeros(0), np.array([0.0])),
    )


def _p5() -> ProblemDef:
    # min ||x||^2  s.t. x1+x2+x3 = 3, 2 - x1 <= 0, x2 - 3 <= 0.
    # The bound x1 >= 2 is active: x* = (2, 0.5, 0.5), mu* = -1,
    # lam* = (3, 0).
    zero = np.zeros((3, 3))
    return ProblemDef(
        name="p5",
        dim_x=3, dim_eq=1, dim_ineq=2,
        eval_f=lambda x: float(x @ x),
        eval_grad_f=lambda x: 2.0 * x,
        eval_hess_f=lambda x: 2.0 * np.eye(3),
        eval_c=lambda x: np.array([x[0] + x[1] + x[2] - 3.0]),
        eval_jac_c=lambda x: np.array([[1.0, 1.0, 1.0]]),
        eval_g=lambda x: np.array([2.0 - x[0], x[1] - 3.0]),
        eval_jac_g=lambda x: np.array([[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
        eval_hess_c_i=lambda x, i: zero,
        eval_hess_g_i=lambda x, i: zero,
        x0=np.array([2.0, 1.0, 0.0]),
        mu0=np.zeros(1),
        lambda0=np.zeros(2),
        known_kkt=(np.array([2.0, 0.5, 0.5]), np.array([-1.0]), np.array([3.0, 0.0])),
    )


_P6_W = np.array([1.0, 2.0, 1.0, 3.0, 1.0])
_P6_C = np.array([2.0, -2.0, 0.5, 1.5, -0.5])
_P6_GAMMA = 0.5  # coupling between x2 and x3; vanishes at the solution


def _p6() -> ProblemDef:
    # Convex 5-d quadratic with upper bounds x_i <= 1.  The cross term
    # gamma*(x2+2)*(x3-0.5) keeps the Hessian non-diagonal without moving the
    # separable solution.  Active bounds at i = 0 and i = 3:
    # x* = (1, -2, 0.5, 1, -0.5), lam* = (2, 0, 0, 3, 0).
    eval_c, eval_jac_c, eval_hess_c_i = _empty_eq(5)
    w, c, gam = _P6_W, _P6_C, _P6_GAMMA
    hess = np.diag(2.0 * w)
    hess[1, 2] = hess[2, 1] = gam

    def eval_f(x):
        return float(w @ (x - c) ** 2 + gam * (x[1] + 2.0) * (x[2] - 0.5))

    def eval_grad_f(x):
        grad = 2.0 * w * (x - c)
        grad[1] += gam * (x[2] - 0.5)
        grad[2] += gam * (x[1] + 2.0)
        return grad

    return ProblemDef(
        name="p6",
        dim_x=5, dim_eq=0, dim_ineq=5,
        eval_f=eval_f,
        eval_grad_f=eval_grad_f,
        eval_hess_f=lambda x: hess.copy(),
        eval_c=eval_c, eval_jac_c=eval_jac_c,
        eval_g=lambda x: x - 1.0,
        eval_jac_g=lambda x: np.eye(5),
        eval_hess_c_i=eval_hess_c_i,
        eval_hess_g_i=lambda x, i: np.zeros((5, 5)),
        x0=np.array([0.0, 0.0, 0.0, 0.0, 0.0]),
        mu0=np.zeros(0),
        lambda0=np.zeros(5),
        known_kkt=(
            np.array([1.0, -2.0, 0.5, 1.0, -0.5]),
            np.zeros(0),
            np.array([2.0, 0.0, 0.0, 3.0, 0.0]),
        ),
    )


_BUILDERS: dict[str, Callable[[], ProblemDef]] = {
    "p1": _p1,
    "p2": _p2,
    "p3": _p3,
    "p4": _p4,
    "p5": _p5,
    "p6": _p6,
}


def problem_names() -> list[str]:
    return list(_BUILDERS)


def get_problem(name: str) -> ProblemDef:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(_BUILDERS)}") from None


def builtin_suite() -> list[ProblemDef]:
    """All built-in problems, each with a hand-derived KKT point."""
    return [build() for build in _BUILDERS.values()]
