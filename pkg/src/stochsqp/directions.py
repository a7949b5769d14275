"""Search directions: active-set SQP, regularized Newton, steepest descent.

The SQP direction comes from the coupled pair of linear systems

    K_a (dx, dmu~, dlam_a~) = -(grad_x L - G_c^T lam_c; c; g_a)
    M   (dmu, dlam)         = -{(J grad_x L; G grad_x L + Pi_c(diag(g)^2 lam))
                                + (Q1^T; Q2^T) dx},

where only the primal solution of the first system is kept and the dual step
for all multipliers is taken from the second.  A solve is declared
unsolvable when a pivoted LU factorization reports a pivot below
1e-12 * max(1, |A|_inf) or the solve residual exceeds 1e-6 * (1 + |rhs|).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .merit import Iterate, PenaltyParams, build_q_matrices, eval_a, eval_q
from .problems import ProblemDef

Array = np.ndarray

PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-6


class DirectionKind(enum.Enum):
    SQP = "Sqp"
    REG_NEWTON = "RegularizedNewton"
    STEEPEST_DESCENT = "SteepestDescent"


@dataclass(frozen=True)
class ActiveSet:
    """Estimated active inequality set, stored as a boolean mask of length r."""

    mask: Array

    def __post_init__(self):
        object.__setattr__(self, "mask", np.asarray(self.mask, dtype=bool))

    @property
    def indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.mask))

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @staticmethod
    def from_indices(r: int, indices) -> "ActiveSet":
        mask = np.zeros(r, dtype=bool)
        mask[list(indices)] = True
        return ActiveSet(mask)


@dataclass
class DirectionDiag:
    cond_estimate_Ka: float = float("nan")
    cond_estimate_M: float = float("nan")
    descent_lhs1: float = float("nan")
    descent_lhs2: float = float("nan")
    descent_rhs: float = float("nan")


@dataclass
class DirectionResult:
    kind: DirectionKind
    dx: Array
    dmu: Array
    dlambda: Array
    solvable: bool
    diag: DirectionDiag = field(default_factory=DirectionDiag)

    def stacked(self) -> Array:
        return np.concatenate([self.dx, self.dmu, self.dlambda])

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.stacked()))


def identify_active_set(g_vals: Array, lam: Array, eps_q: float) -> ActiveSet:
    """Indices with g_i >= -eps_q * lam_i (ties count as active)."""
    if eps_q <= 0:
        raise ValueError("eps_q must be positive")
    g = np.asarray(g_vals, dtype=float)
    return ActiveSet(g >= -eps_q * np.asarray(lam, dtype=float))


_getrf, _getrs, _gecon = sla.get_lapack_funcs(
    ("getrf", "getrs", "gecon"), (np.empty((2, 2), dtype=np.float64),)
)


def _try_solve(a: Array, rhs: Array) -> tuple[Array | None, float]:
    """LU solve with the pivot/residual singularity rule.

    Returns (solution or None, condition estimate).  The condition estimate
    is the 1-norm reciprocal-condition estimate from LAPACK gecon.
    """
    n = a.shape[0]
    if n == 0:
        return np.zeros(0), 1.0
    abs_a = np.abs(a)
    anorm_inf = abs_a.sum(axis=1).max()
    lu, piv, info = _getrf(a, overwrite_a=False)
    if info < 0:
        raise ValueError(f"illegal LAPACK argument {-info} in getrf")
    pivots = np.abs(lu.diagonal())
    rcond, _ = _gecon(lu, abs_a.sum(axis=0).max(), norm="1")
    cond = 1.0 / rcond if rcond > 0 else np.inf
    if info > 0 or pivots.min() < PIVOT_TOL * max(1.0, anorm_inf):
        return None, cond
    z, info = _getrs(lu, piv, rhs)
    resid = np.linalg.norm(a @ z - rhs)
    if not np.isfinite(resid) or resid > RESIDUAL_TOL * (1.0 + np.linalg.norm(rhs)):
        return None, cond
    return z, cond


def solve_sqp_system(
    problem: ProblemDef,
    it: Iterate,
    aset: ActiveSet,
    B: Array,
    gradbar: Array,
    hessbar: Array,
    gradbar_for_q: Array | None = None,
) -> DirectionResult:
    """Assemble and solve the coupled SQP systems.

    ``gradbar`` feeds grad_x L in both right-hand sides; ``gradbar_for_q``
    (defaulting to ``gradbar``) together with ``hessbar`` feeds the Q
    matrices, which allows the two-independent-samples construction of the
    local scheme.  Singular systems yield ``solvable=False`` rather than an
    exception.
    """
    d, m, r = problem.dim_x, problem.dim_eq, problem.dim_ineq
    J = np.asarray(problem.eval_jac_c(it.x), dtype=float).reshape(m, d)
    G = np.asarray(problem.eval_jac_g(it.x), dtype=float).reshape(r, d)
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    c = np.asarray(problem.eval_c(it.x), dtype=float)
    mask = aset.mask
    gx_l = np.asarray(gradbar, dtype=float) + J.T @ it.mu + G.T @ it.lam

    na = int(mask.sum())
    g_a, G_a = g[mask], G[mask]
    lam_c, G_c = it.lam[~mask], G[~mask]

    ka = np.zeros((d + m + na, d + m + na))
    ka[:d, :d] = B
    ka[:d, d:d + m] = J.T
    ka[:d, d + m:] = G_a.T
    ka[d:d + m, :d] = J
    ka[d + m:, :d] = G_a
    rhs1 = -np.concatenate([gx_l - G_c.T @ lam_c, c, g_a])

    diag = DirectionDiag()
    failed = DirectionResult(
        kind=DirectionKind.SQP,
        dx=np.zeros(d), dmu=np.zeros(m), dlambda=np.zeros(r),
        solvable=False, diag=diag,
    )

    z1, diag.cond_estimate_Ka = _try_solve(ka, rhs1)
    if z1 is None:
        return failed
    dx = z1[:d]

    grad_q = gradbar if gradbar_for_q is None else gradbar_for_q
    q1, q2, mmat = build_q_matrices(problem, it, grad_q, hessbar)
    pic_g2lam = np.where(mask, 0.0, g**2 * it.lam)
    target = np.concatenate([J @ gx_l, G @ gx_l + pic_g2lam])
    rhs2 = -(target + np.concatenate([q1.T @ dx, q2.T @ dx]))
    z2, diag.cond_estimate_M = _try_solve(mmat, rhs2)
    if z2 is None:
        return failed

    diag.descent_rhs = float(dx @ dx + target @ target)
    return DirectionResult(
        kind=DirectionKind.SQP,
        dx=dx, dmu=z2[:m], dlambda=z2[m:],
        solvable=True, diag=diag,
    )


def build_reg_newton_matrix(
    problem: ProblemDef,
    it: Iterate,
    aset: ActiveSet,
    p: PenaltyParams,
    B: Array,
    gamma_B: float,
) -> Array:
    """Shifted second-order model H + (gamma_B + |H|) I of the merit function.

    The blocks use only constraint derivatives and B, with the active-set
    projections applied where the model prescribes them; the shift guarantees
    a smallest eigenvalue of at least gamma_B.
    """
    d, m, r = problem.dim_x, problem.dim_eq, problem.dim_ineq
    J = np.asarray(problem.eval_jac_c(it.x), dtype=float).reshape(m, d)
    G = np.asarray(problem.eval_jac_g(it.x), dtype=float).reshape(r, d)
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    mask = aset.mask
    a_x = eval_a(g)
    q = eval_q(a_x, it.lam, p.nu)
    if q <= 0:
        raise ValueError("regularized Newton model requires a(x) < nu")

    G_a = G[mask]
    g_c = np.where(mask, 0.0, g)

    h_xx = (
        B
        + p.eta * B @ (J.T @ J + G.T @ G) @ B
        + (J.T @ J) / p.epsilon
        + (G_a.T @ G_a) / (p.epsilon * q)
    )

    # M with the inactive-projected inequality values on the diagonal block
    mc = np.empty((m + r, m + r))
    mc[:m, :m] = J @ J.T
    mc[:m, m:] = J @ G.T
    mc[m:, :m] = mc[:m, m:].T
    mc[m:, m:] = G @ G.T + np.diag(g_c**2)

    jg = np.vstack([J, G])
    proj_g = np.where(mask[:, None], G, 0.0)
    h_dx = np.vstack([J, proj_g]) + p.eta * mc @ jg @ B

    h_dd = p.eta * mc @ mc
    h_dd[m:, m:] -= p.epsilon * q * np.diag(np.where(mask, 0.0, 1.0))

    n = d + m + r
    h = np.zeros((n, n))
    h[:d, :d] = h_xx
    h[:d, d:] = h_dx.T
    h[d:, :d] = h_dx
    h[d:, d:] = h_dd
    h = 0.5 * (h + h.T)  # kill roundoff asymmetry
    shift = gamma_B + np.linalg.norm(h, 2)
    h[np.diag_indices(n)] += shift
    return h


def solve_fallback(
    hhat: Array | None,
    merit_grad: Array,
    dims: tuple[int, int, int],
) -> DirectionResult:
    """Fallback step H^ delta = -grad.  ``hhat=None`` means the identity
    (steepest descent); otherwise ``hhat`` must be positive definite and a
    Cholesky failure is a hard error.
    """
    d, m, r = dims
    grad = np.asarray(merit_grad, dtype=float)
    if hhat is None:
        step = -grad
        kind = DirectionKind.STEEPEST_DESCENT
    else:
        try:
            cho = sla.cho_factor(hhat, check_finite=False)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - construction bug
            raise RuntimeError("regularized Newton matrix is not positive definite") from exc
        step = sla.cho_solve(cho, -grad, check_finite=False)
        resid = np.linalg.norm(hhat @ step + grad)
        if resid > 1e-10 * (1.0 + np.linalg.norm(grad)):
            raise RuntimeError(f"fallback solve residual {resid:.3e} exceeds tolerance")
        kind = DirectionKind.REG_NEWTON
    return DirectionResult(
        kind=kind,
        dx=step[:d], dmu=step[d:d + m], dlambda=step[d + m:],
        solvable=True,
    )
