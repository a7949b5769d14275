"""Augmented Lagrangian merit function, its gradient, and the KKT residual.

All quantities live on the perturbed feasible set T_nu = {x : a(x) <= nu/2}
with a(x) = sum_i max(g_i(x), 0)^3.  The merit function is

    L_{eps,nu,eta}(x, mu, lam) = L(x, mu, lam) + |c|^2 / (2 eps)
        + (|g|^2 - |b|^2) / (2 eps q_nu)
        + (eta/2) * |(J grad_x L; G grad_x L + diag(g)^2 lam)|^2,

with q_nu = (nu - a(x)) / (1 + |lam|^2), b = min(0, g + eps q_nu lam), and
w = g - b = max(g, -eps q_nu lam).  The gradient splits into a dominant part
(linear in the residual quantities) and a higher-order part (quadratic in
(g_active, lam_inactive)); both are produced alongside the full gradient.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .problems import ProblemDef

Array = np.ndarray


class OutOfPerturbedSet(Exception):
    """Raised when an iterate violates the perturbed-set precondition."""

    def __init__(self, a_x: float, nu: float, what: str = "evaluation"):
        self.a_x = float(a_x)
        self.nu = float(nu)
        super().__init__(f"{what} outside perturbed set: a(x)={a_x:.6g}, nu={nu:.6g}")


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty parameters (eps, nu, eta), all strictly positive."""

    epsilon: float
    nu: float
    eta: float

    def __post_init__(self):
        if not (self.epsilon > 0 and self.nu > 0 and self.eta > 0):
            raise ValueError("penalty parameters must be strictly positive")


@dataclass(frozen=True)
class Iterate:
    """Primal-dual triple (x, mu, lam)."""

    x: Array
    mu: Array
    lam: Array

    def __post_init__(self):
        for name in ("x", "mu", "lam"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"iterate field {name} has nonfinite entries")
            object.__setattr__(self, name, arr)

    def stacked(self) -> Array:
        return np.concatenate([self.x, self.mu, self.lam])


@dataclass
class MeritEval:
    value: float
    a_x: float
    q: float
    w: Array
    b: Array
    in_T_nu: bool


@dataclass
class MeritGradient:
    grad_x: Array
    grad_mu: Array
    grad_lambda: Array
    part1: Array
    part2: Array
    Q1: Array
    Q2: Array
    M: Array

    def full(self) -> Array:
        return np.concatenate([self.grad_x, self.grad_mu, self.grad_lambda])


# ------------------------------------------------------------------
# scalar building blocks
# ------------------------------------------------------------------

def eval_a(g_vals: Array) -> float:
    """Cubic violation a = sum max(g_i, 0)^3; zero iff g <= 0."""
    gp = np.maximum(np.asarray(g_vals, dtype=float), 0.0)
    return float(np.sum(gp**3))


def eval_q(a_x: float, lam: Array, nu: float) -> float:
    """q = (nu - a) / (1 + |lam|^2).  May be <= 0 outside T_nu; caller checks."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    lam = np.asarray(lam, dtype=float)
    return float((nu - a_x) / (1.0 + lam @ lam))


def eval_w(g_vals: Array, lam: Array, eps_q: float) -> tuple[Array, Array]:
    """Dual-feasibility measure w = max(g, -eps_q*lam) and b = min(0, g + eps_q*lam).

    Each output follows its own closed form; they satisfy w = g - b up to
    one rounding of the sum g + eps_q*lam.
    """
    if eps_q <= 0:
        raise ValueError("eps_q must be positive")
    g = np.asarray(g_vals, dtype=float)
    shifted = eps_q * np.asarray(lam, dtype=float)
    return np.maximum(g, -shifted), np.minimum(0.0, g + shifted)


def kkt_residual(problem: ProblemDef, it: Iterate, grad_f: Array | None = None) -> float:
    """Norm of (grad_x L, c, max(g, -lam)); grad_f defaults to the exact oracle."""
    if grad_f is None:
        grad_f = problem.eval_grad_f(it.x)
    gx_l = np.asarray(grad_f, dtype=float)
    if problem.dim_eq:
        gx_l = gx_l + problem.eval_jac_c(it.x).T @ it.mu
    if problem.dim_ineq:
        gx_l = gx_l + problem.eval_jac_g(it.x).T @ it.lam
    c = problem.eval_c(it.x)
    comp = np.maximum(problem.eval_g(it.x), -it.lam)
    return float(np.sqrt(gx_l @ gx_l + c @ c + comp @ comp))


# ------------------------------------------------------------------
# shared assembly pieces
# ------------------------------------------------------------------

@dataclass
class _Pieces:
    c: Array
    J: Array
    g: Array
    G: Array
    a_x: float
    q: float
    w: Array
    b: Array
    gx_l: Array        # grad_x L with the supplied objective gradient
    v_full: Array      # (J gx_l; G gx_l + diag(g)^2 lam)
    v_g_full: Array    # inequality block of v_full


def _pieces(problem: ProblemDef, it: Iterate, p: PenaltyParams, gradf: Array) -> _Pieces:
    c = np.asarray(problem.eval_c(it.x), dtype=float)
    J = np.asarray(problem.eval_jac_c(it.x), dtype=float).reshape(problem.dim_eq, problem.dim_x)
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    G = np.asarray(problem.eval_jac_g(it.x), dtype=float).reshape(problem.dim_ineq, problem.dim_x)
    a_x = eval_a(g)
    q = eval_q(a_x, it.lam, p.nu)
    if q <= 0:
        raise OutOfPerturbedSet(a_x, p.nu, "merit gradient")
    w, b = eval_w(g, it.lam, p.epsilon * q)
    gx_l = np.asarray(gradf, dtype=float) + J.T @ it.mu + G.T @ it.lam
    v_g_full = G @ gx_l + (g**2) * it.lam
    v_full = np.concatenate([J @ gx_l, v_g_full])
    return _Pieces(c, J, g, G, a_x, q, w, b, gx_l, v_full, v_g_full)


def build_q_matrices(
    problem: ProblemDef,
    it: Iterate,
    gradf: Array,
    hessf: Array,
) -> tuple[Array, Array, Array]:
    """Q1 (d x m), Q2 (d x r), and M ((m+r) x (m+r)) at the given iterate.

    ``gradf``/``hessf`` stand in for the objective derivatives, exact or
    sampled; constraint derivatives are always exact.
    """
    d, m, r = problem.dim_x, problem.dim_eq, problem.dim_ineq
    J = np.asarray(problem.eval_jac_c(it.x), dtype=float).reshape(m, d)
    G = np.asarray(problem.eval_jac_g(it.x), dtype=float).reshape(r, d)
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    gx_l = np.asarray(gradf, dtype=float) + J.T @ it.mu + G.T @ it.lam

    hx_l = np.asarray(hessf, dtype=float).copy()
    for i in range(m):
        hx_l += it.mu[i] * problem.eval_hess_c_i(it.x, i)
    for i in range(r):
        hx_l += it.lam[i] * problem.eval_hess_g_i(it.x, i)

    q1 = hx_l @ J.T
    for i in range(m):
        q1[:, i] += problem.eval_hess_c_i(it.x, i) @ gx_l
    q2 = hx_l @ G.T
    for i in range(r):
        q2[:, i] += problem.eval_hess_g_i(it.x, i) @ gx_l
    q2 += 2.0 * G.T * (g * it.lam)[None, :]

    mmat = np.empty((m + r, m + r))
    mmat[:m, :m] = J @ J.T
    mmat[:m, m:] = J @ G.T
    mmat[m:, :m] = mmat[:m, m:].T
    mmat[m:, m:] = G @ G.T + np.diag(g**2)
    return q1, q2, mmat


def default_active_mask(g_vals: Array, lam: Array, eps_q: float) -> Array:
    """Estimated active set {i : g_i >= -eps_q * lam_i} as a boolean mask."""
    return np.asarray(g_vals, dtype=float) >= -eps_q * np.asarray(lam, dtype=float)


# ------------------------------------------------------------------
# merit function and gradient
# ------------------------------------------------------------------

def eval_merit(
    problem: ProblemDef,
    it: Iterate,
    p: PenaltyParams,
    fbar: float | None = None,
    gradbar: Array | None = None,
) -> MeritEval:
    """Evaluate the merit function at ``it``.

    ``fbar`` replaces f(x) in the Lagrangian term and ``gradbar`` replaces
    grad f(x) inside the optimality-error term; both default to the exact
    oracles, which yields the deterministic merit value.  Raises
    ``OutOfPerturbedSet`` when a(x) > nu/2.
    """
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    a_x = eval_a(g)
    if a_x > p.nu / 2.0:
        raise OutOfPerturbedSet(a_x, p.nu, "merit evaluation")
    if fbar is None:
        fbar = problem.eval_f(it.x)
    gradf = problem.eval_grad_f(it.x) if gradbar is None else gradbar
    pc = _pieces(problem, it, p, gradf)

    value = (
        float(fbar) + it.mu @ pc.c + it.lam @ g
        + (pc.c @ pc.c) / (2.0 * p.epsilon)
        + (g @ g - pc.b @ pc.b) / (2.0 * p.epsilon * pc.q)
        + 0.5 * p.eta * (pc.v_full @ pc.v_full)
    )
    return MeritEval(value=float(value), a_x=a_x, q=pc.q, w=pc.w, b=pc.b, in_T_nu=True)


def eval_merit_gradient(
    problem: ProblemDef,
    it: Iterate,
    p: PenaltyParams,
    gradbar: Array | None = None,
    hessbar: Array | None = None,
    active: Array | None = None,
) -> MeritGradient:
    """Three-block merit gradient plus its dominant/higher-order split.

    ``active`` is the boolean active-set mask used by the split's projections;
    when omitted it is recomputed from the {g_i >= -eps*q*lam_i} rule so the
    caller-supplied set and the default agree on ties (active wins).
    Requires a(x) < nu.
    """
    gradf = problem.eval_grad_f(it.x) if gradbar is None else gradbar
    hessf = problem.eval_hess_f(it.x) if hessbar is None else hessbar
    pc = _pieces(problem, it, p, gradf)
    m, r = problem.dim_eq, problem.dim_ineq
    q1, q2, mmat = build_q_matrices(problem, it, gradf, hessf)
    m11, m12 = mmat[:m, :m], mmat[:m, m:]
    m21, m22 = mmat[m:, :m], mmat[m:, m:]

    if active is None:
        active = default_active_mask(pc.g, it.lam, p.epsilon * pc.q)
    active = np.asarray(active, dtype=bool)

    a_nu = p.nu - pc.a_x
    ell = np.maximum(pc.g, 0.0) ** 2
    w_sq = pc.w @ pc.w
    inv_eq = 1.0 / (p.epsilon * pc.q)

    # full gradient
    grad_x = (
        pc.gx_l
        + p.eta * (q1 @ pc.v_full[:m] + q2 @ pc.v_full[m:])
        + pc.J.T @ pc.c / p.epsilon
        + pc.G.T @ pc.w * inv_eq
        + (3.0 * w_sq / (2.0 * p.epsilon * pc.q * a_nu)) * (pc.G.T @ ell)
    )
    grad_mu = pc.c + p.eta * (m11 @ pc.v_full[:m] + m12 @ pc.v_full[m:])
    grad_lam = (
        pc.w
        + (w_sq / (p.epsilon * a_nu)) * it.lam
        + p.eta * (m21 @ pc.v_full[:m] + m22 @ pc.v_full[m:])
    )

    # dominant part: inactive projection inside the linearized block
    s_active = np.where(active, pc.g**2 * it.lam, 0.0)
    v_g_c = pc.v_g_full - s_active
    part1_x = (
        pc.gx_l
        + pc.J.T @ pc.c / p.epsilon
        + pc.G.T @ pc.w * inv_eq
        + p.eta * (q1 @ pc.v_full[:m] + q2 @ v_g_c)
    )
    part1_mu = pc.c + p.eta * (m11 @ pc.v_full[:m] + m12 @ v_g_c)
    part1_lam = pc.w + p.eta * (m21 @ pc.v_full[:m] + m22 @ v_g_c)

    # higher-order part: at least quadratic in (g_active, lam_inactive)
    part2_x = (3.0 * w_sq / (2.0 * p.epsilon * pc.q * a_nu)) * (pc.G.T @ ell) + p.eta * (q2 @ s_active)
    part2_mu = p.eta * (m12 @ s_active)
    part2_lam = (w_sq / (p.epsilon * a_nu)) * it.lam + p.eta * (m22 @ s_active)

    return MeritGradient(
        grad_x=grad_x,
        grad_mu=grad_mu,
        grad_lambda=grad_lam,
        part1=np.concatenate([part1_x, part1_mu, part1_lam]),
        part2=np.concatenate([part2_x, part2_mu, part2_lam]),
        Q1=q1,
        Q2=q2,
        M=mmat,
    )
