"""Adaptive stochastic scheme: verified batch sizes, epsilon adaptation,
direction selection, merit estimation, and stochastic Armijo line search.

Each iteration performs five steps:

1. estimate objective derivatives with a batch grown until the realized
   residual estimate certifies the gradient-accuracy event;
2. shrink eps until the feasibility error is dominated by the merit gradient
   and, when the SQP system is solvable, the dominant gradient part yields
   sufficient descent;
3. keep the SQP direction unless it is unavailable or its higher-order
   gradient part spoils the descent, in which case fall back to a regularized
   Newton (or steepest descent) step on the merit function;
4. form the test iterate, enlarging nu and rejecting when it leaves the
   perturbed set, otherwise estimate the merit at both points from a second
   independent batch;
5. Armijo test with stepsize and reliability-budget updates.

The run stops when min(alpha*|step|, R) <= tol, on the iteration budget, or
when the batch rule demands more than the cap (treated as convergence, since
it signals a vanishing residual).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .directions import (
    ActiveSet,
    DirectionResult,
    build_reg_newton_matrix,
    identify_active_set,
    solve_fallback,
    solve_sqp_system,
)
from .merit import (
    Iterate,
    MeritGradient,
    PenaltyParams,
    eval_a,
    eval_merit,
    eval_merit_gradient,
    eval_q,
    eval_w,
    kkt_residual,
)
from .problems import NoiseModel, OracleBatch, ProblemDef, merge_batches, sample_batch
from .trace import IterationRecord, RunStatus, RunTrace, StepType

Array = np.ndarray

STREAM_XI1 = 1
STREAM_XI2 = 2

EPS_FLOOR = 1e-300


class BatchExplosion(Exception):
    """Batch rule demanded more than the cap: the residual is effectively zero."""

    def __init__(self, needed: int, cap: int):
        self.needed = needed
        self.cap = cap
        super().__init__(f"batch size {needed} exceeds cap {cap}")


class StalledEpsilon(Exception):
    """eps underflowed while its two conditions kept failing (diagnostic)."""


class Fallback(enum.Enum):
    REG_NEWTON = "RegNewton"
    STEEPEST_DESCENT = "SteepestDescent"


@dataclass
class AdaptiveConfig:
    """Tuning parameters; defaults follow the reference experiment setup."""

    alpha_max: float = 1.5
    eta: float = 1.0
    gamma_B: float = 0.1
    nu0: Optional[float] = None  # None: 2 * sum max(g_i(x0), 0)^3 + 1
    eps0: float = 1.0
    delta0: float = 1.0
    beta: float = 0.3
    rho: float = 2.0
    kappa_grad: float = 1.0
    kappa_f: float = 0.04
    p_grad: float = 0.9
    p_f: float = 0.9
    big_O_const: float = 2.0
    fallback: Fallback = Fallback.REG_NEWTON
    max_iters: int = 100_000
    tol: float = 1e-5
    max_batch: int = 1_000_000
    b_rule: str = "identity"  # or "lagrangian"
    debug_checks: bool = False

    def __post_init__(self):
        if not (0 < self.beta < 1):
            raise ValueError("beta must be in (0, 1)")
        if not (0 < self.kappa_f <= self.beta / (4.0 * self.alpha_max)):
            raise ValueError("kappa_f must lie in (0, beta / (4 * alpha_max)]")
        if self.rho <= 1:
            raise ValueError("rho must exceed 1")
        for name in ("alpha_max", "eta", "gamma_B", "eps0", "delta0", "kappa_grad", "big_O_const", "tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("p_grad", "p_f"):
            if not (0 < getattr(self, name) < 1):
                raise ValueError(f"{name} must be in (0, 1)")
        if self.max_iters < 0 or self.max_batch < 1:
            raise ValueError("max_iters must be >= 0 and max_batch >= 1")
        if self.b_rule not in ("identity", "lagrangian"):
            raise ValueError("b_rule must be 'identity' or 'lagrangian'")

    @property
    def method_name(self) -> str:
        return "adaptive-newton" if self.fallback is Fallback.REG_NEWTON else "adaptive-gd"


@dataclass
class SolverState:
    it: Iterate
    alpha_bar: float
    eps_bar: float
    nu_bar: float
    delta_bar: float
    iter: int = 0


@dataclass
class NuIncreased:
    nu_new: float
    a_test: float


@dataclass
class Estimates:
    merit_current: float
    merit_test: float
    batch2: int
    test_it: Iterate


def _b_matrix(problem: ProblemDef, it: Iterate, cfg: AdaptiveConfig) -> Array:
    if cfg.b_rule == "lagrangian":
        return problem.lagrangian_hessian(it.x, it.mu, it.lam)
    return np.eye(problem.dim_x)


# ------------------------------------------------------------------
# step 1: derivative estimation with verified batch size
# ------------------------------------------------------------------

def xi1_required_size(cfg: AdaptiveConfig, d: int, alpha: float, rbar: float) -> float:
    """Exit threshold of the batch loop: C log(d/p) / (kappa^2 alpha^2 Rbar^2)."""
    return cfg.big_O_const * math.log(d / cfg.p_grad) / (cfg.kappa_grad**2 * alpha**2 * rbar**2)


def xi1_start_size(cfg: AdaptiveConfig, d: int, alpha: float, rbar: float) -> int:
    """Initial batch size, with the (kappa^2 alpha^2 ^ 1) clamp."""
    scale = min(cfg.kappa_grad**2 * alpha**2, 1.0)
    return math.ceil(cfg.big_O_const * math.log(d / cfg.p_grad) / (scale * rbar**2))


def step1_estimate(
    problem: ProblemDef,
    noise: NoiseModel,
    state: SolverState,
    cfg: AdaptiveConfig,
    prev_batch: int,
    prev_rbar: float | None,
) -> tuple[OracleBatch, float, int]:
    """Grow the derivative batch until its size certifies the realized residual.

    Returns (batch, residual estimate, batch size).  Batch sizes are monotone
    across iterations (at least previous + 1).  With zero noise variance the
    estimates are exact, the accuracy event holds surely for any size, and
    the loop accepts the first batch.  Raises ``BatchExplosion`` when the rule
    wants more than ``cfg.max_batch``.
    """
    d = problem.dim_x
    t = state.iter
    n = prev_batch + 1
    if noise.sigma2 > 0 and prev_rbar is not None and prev_rbar > 0:
        n = max(n, xi1_start_size(cfg, d, state.alpha_bar, prev_rbar))
    if n > cfg.max_batch:
        raise BatchExplosion(n, cfg.max_batch)

    batch = sample_batch(problem, noise, state.it.x, n, (STREAM_XI1, t, 0))
    attempt = 1
    while True:
        rbar = kkt_residual(problem, state.it, grad_f=batch.gradbar)
        if noise.sigma2 == 0.0:
            return batch, rbar, n
        if rbar > 0 and n >= xi1_required_size(cfg, d, state.alpha_bar, rbar):
            return batch, rbar, n
        n_next = 2 * n
        if n_next > cfg.max_batch:
            raise BatchExplosion(n_next, cfg.max_batch)
        extra = sample_batch(problem, noise, state.it.x, n_next - n, (STREAM_XI1, t, attempt))
        batch = merge_batches(batch, extra)
        n = n_next
        attempt += 1


# ------------------------------------------------------------------
# step 2: set epsilon
# ------------------------------------------------------------------

def step2_set_epsilon(
    problem: ProblemDef,
    state: SolverState,
    batch: OracleBatch,
    cfg: AdaptiveConfig,
    B: Array,
) -> tuple[float, DirectionResult, MeritGradient, ActiveSet]:
    """Halve eps until the feasibility bound holds and, when the SQP system is
    solvable, the dominant-part descent condition holds.

    The active set, dual-feasibility measure, merit gradient, and SQP system
    are all recomputed at each trial eps.  Returns the final eps together
    with the last direction result (possibly unsolvable), the merit gradient,
    and the active set, all evaluated at that eps.
    """
    it = state.it
    g = np.asarray(problem.eval_g(it.x), dtype=float)
    c = np.asarray(problem.eval_c(it.x), dtype=float)
    a_x = eval_a(g)
    q = eval_q(a_x, it.lam, state.nu_bar)
    eps = state.eps_bar
    thresh = 0.5 * min(cfg.gamma_B, cfg.eta)

    while True:
        p = PenaltyParams(eps, state.nu_bar, cfg.eta)
        aset = identify_active_set(g, it.lam, eps * q)
        mgrad = eval_merit_gradient(problem, it, p, batch.gradbar, batch.hessbar, aset.mask)
        w, _ = eval_w(g, it.lam, eps * q)
        feas_err = math.hypot(np.linalg.norm(c), np.linalg.norm(w))
        cond_feas = feas_err <= np.linalg.norm(mgrad.full())

        dres = solve_sqp_system(problem, it, aset, B, batch.gradbar, batch.hessbar)
        cond_descent = True
        if dres.solvable:
            step = dres.stacked()
            dres.diag.descent_lhs1 = float(mgrad.part1 @ step)
            dres.diag.descent_lhs2 = float(mgrad.part2 @ step)
            cond_descent = dres.diag.descent_lhs1 <= -thresh * dres.diag.descent_rhs

        if cond_feas and cond_descent:
            return eps, dres, mgrad, aset
        eps /= cfg.rho
        if eps < EPS_FLOOR:
            raise StalledEpsilon(f"eps underflowed below {EPS_FLOOR} at iteration {state.iter}")


# ------------------------------------------------------------------
# step 3: decide the search direction
# ------------------------------------------------------------------

def step3_choose_direction(
    problem: ProblemDef,
    state: SolverState,
    eps: float,
    aset: ActiveSet,
    dres: DirectionResult,
    mgrad: MeritGradient,
    cfg: AdaptiveConfig,
    B: Array,
) -> DirectionResult:
    """Keep the SQP direction unless unsolvable or its higher-order term
    breaks sufficient descent; otherwise take the configured fallback step."""
    quarter = 0.25 * min(cfg.gamma_B, cfg.eta)
    if dres.solvable and not (dres.diag.descent_lhs2 > quarter * dres.diag.descent_rhs):
        return dres
    dims = (problem.dim_x, problem.dim_eq, problem.dim_ineq)
    if cfg.fallback is Fallback.REG_NEWTON:
        p = PenaltyParams(eps, state.nu_bar, cfg.eta)
        hhat = build_reg_newton_matrix(problem, state.it, aset, p, B, cfg.gamma_B)
        return solve_fallback(hhat, mgrad.full(), dims)
    return solve_fallback(None, mgrad.full(), dims)


# ------------------------------------------------------------------
# step 4: estimate the merit function
# ------------------------------------------------------------------

def step4_estimate_merit(
    problem: ProblemDef,
    noise: NoiseModel,
    state: SolverState,
    eps: float,
    direction: DirectionResult,
    mgrad: MeritGradient,
    cfg: AdaptiveConfig,
) -> Union[NuIncreased, Estimates]:
    """Form the test iterate; either report the required nu increase or return
    merit estimates at both points from one fresh batch.

    The directional derivative in the batch-size rule reuses the step-1
    gradient estimate and is never re-sampled.
    """
    it = state.it
    alpha = state.alpha_bar
    test_it = Iterate(
        it.x + alpha * direction.dx,
        it.mu + alpha * direction.dmu,
        it.lam + alpha * direction.dlambda,
    )
    a_test = eval_a(problem.eval_g(test_it.x))
    if a_test > state.nu_bar / 2.0:
        j = max(1, math.ceil(math.log(2.0 * a_test / state.nu_bar) / math.log(cfg.rho)))
        return NuIncreased(nu_new=state.nu_bar * cfg.rho**j, a_test=a_test)

    if noise.sigma2 == 0.0:
        n2 = 1  # estimates are exact; the accuracy events hold for any size
    else:
        gdot = float(mgrad.full() @ direction.stacked())
        denom = min((cfg.kappa_f * alpha**2 * gdot) ** 2, state.delta_bar**2)
        if denom <= 0 or not math.isfinite(denom):
            n2 = cfg.max_batch
        else:
            n2 = min(cfg.max_batch, math.ceil(cfg.big_O_const * math.log(1.0 / cfg.p_f) / denom))
        n2 = max(1, n2)

    p = PenaltyParams(eps, state.nu_bar, cfg.eta)
    b_cur = sample_batch(problem, noise, it.x, n2, (STREAM_XI2, state.iter, 0))
    b_test = sample_batch(problem, noise, test_it.x, n2, (STREAM_XI2, state.iter, 1))
    m_cur = eval_merit(problem, it, p, b_cur.fbar, b_cur.gradbar).value
    m_test = eval_merit(problem, test_it, p, b_test.fbar, b_test.gradbar).value
    if not (math.isfinite(m_cur) and math.isfinite(m_test)):
        raise RuntimeError(f"nonfinite merit estimate at iteration {state.iter}")
    return Estimates(merit_current=m_cur, merit_test=m_test, batch2=n2, test_it=test_it)


# ------------------------------------------------------------------
# step 5: line search
# ------------------------------------------------------------------

def step5_line_search(
    state: SolverState,
    est: Estimates,
    mgrad: MeritGradient,
    direction: DirectionResult,
    cfg: AdaptiveConfig,
) -> tuple[Iterate, float, float, StepType]:
    """Armijo test; returns (next iterate, next alpha, next delta, step type).

    eps and nu are untouched by all three outcomes.
    """
    gdot = float(mgrad.full() @ direction.stacked())
    predicted = cfg.beta * state.alpha_bar * gdot
    if est.merit_test <= est.merit_current + predicted:
        alpha_new = min(cfg.rho * state.alpha_bar, cfg.alpha_max)
        if -predicted >= state.delta_bar:
            return est.test_it, alpha_new, cfg.rho * state.delta_bar, StepType.RELIABLE
        return est.test_it, alpha_new, state.delta_bar / cfg.rho, StepType.UNRELIABLE
    return state.it, state.alpha_bar / cfg.rho, state.delta_bar / cfg.rho, StepType.UNSUCCESSFUL


# ------------------------------------------------------------------
# driver
# ------------------------------------------------------------------

def run(problem: ProblemDef, noise: NoiseModel, cfg: AdaptiveConfig) -> RunTrace:
    """Run the adaptive scheme from the problem's initial iterate.

    Stops when min(alpha*|step|, R) <= tol (``Converged``), when the
    iteration budget is exhausted (``MaxIters``), or when the derivative
    batch rule exceeds the cap (``ConvergedByBatchCap``).  Identical
    (problem, noise, cfg) inputs produce bit-identical traces.
    """
    it = Iterate(problem.x0, problem.mu0, problem.lambda0)
    nu = cfg.nu0 if cfg.nu0 is not None else 2.0 * eval_a(problem.eval_g(it.x)) + 1.0
    state = SolverState(it=it, alpha_bar=cfg.alpha_max, eps_bar=cfg.eps0,
                        nu_bar=nu, delta_bar=cfg.delta0)
    trace = RunTrace(problem=problem.name, method=cfg.method_name, status=RunStatus.MAX_ITERS)
    prev_batch = 0
    prev_rbar: float | None = None
    b_identity = np.eye(problem.dim_x)

    for t in range(cfg.max_iters):
        state.iter = t
        r_exact = kkt_residual(problem, state.it)
        if r_exact <= cfg.tol:
            trace.status = RunStatus.CONVERGED
            break

        try:
            batch, rbar, n1 = step1_estimate(problem, noise, state, cfg, prev_batch, prev_rbar)
        except BatchExplosion:
            trace.status = RunStatus.CONVERGED_BATCH_CAP
            break
        trace.total_samples += n1
        prev_batch, prev_rbar = n1, rbar

        B = _b_matrix(problem, state.it, cfg) if cfg.b_rule != "identity" else b_identity
        eps, dres, mgrad, aset = step2_set_epsilon(problem, state, batch, cfg, B)
        state.eps_bar = eps
        if cfg.debug_checks:
            _assert_step2_invariant(problem, state, batch, eps, cfg, aset)

        direction = step3_choose_direction(problem, state, eps, aset, dres, mgrad, cfg, B)
        a_x = eval_a(problem.eval_g(state.it.x))
        step_norm = direction.norm
        trace.iters = t + 1

        if step_norm > 0 and state.alpha_bar * step_norm <= cfg.tol:
            trace.status = RunStatus.CONVERGED
            break

        base = dict(
            iter=t, kkt_residual_exact=r_exact, kkt_residual_est=rbar,
            direction_kind=direction.kind, alpha_bar=state.alpha_bar,
            eps_bar=eps, nu_bar=state.nu_bar, delta_bar=state.delta_bar,
            batch1=n1, a_x=a_x, step_norm=step_norm,
            descent_lhs1=direction.diag.descent_lhs1,
            descent_lhs2=direction.diag.descent_lhs2,
            descent_rhs=direction.diag.descent_rhs,
        )

        if step_norm == 0.0:
            # degenerate direction while R > tol: shrink alpha and delta
            trace.records.append(IterationRecord(
                step_type=StepType.UNSUCCESSFUL, batch2=0, merit_est=float("nan"), **base))
            state.alpha_bar /= cfg.rho
            state.delta_bar /= cfg.rho
            continue

        outcome = step4_estimate_merit(problem, noise, state, eps, direction, mgrad, cfg)
        if isinstance(outcome, NuIncreased):
            trace.records.append(IterationRecord(
                step_type=StepType.NU_INCREASE, batch2=0, merit_est=float("nan"), **base))
            state.nu_bar = outcome.nu_new
            continue

        trace.total_samples += 2 * outcome.batch2
        new_it, alpha_new, delta_new, stype = step5_line_search(state, outcome, mgrad, direction, cfg)
        trace.records.append(IterationRecord(
            step_type=stype, batch2=outcome.batch2, merit_est=outcome.merit_current, **base))
        state.it = new_it
        state.alpha_bar = alpha_new
        state.delta_bar = delta_new

    trace.x, trace.mu, trace.lam = state.it.x, state.it.mu, state.it.lam
    trace.terminal_kkt_residual = kkt_residual(problem, state.it)
    trace.final_alpha = state.alpha_bar
    trace.final_eps = state.eps_bar
    trace.final_nu = state.nu_bar
    trace.final_delta = state.delta_bar
    return trace


def _assert_step2_invariant(problem, state, batch, eps, cfg, aset) -> None:
    # feasibility bound must hold at the eps returned by step 2
    it = state.it
    g = problem.eval_g(it.x)
    c = problem.eval_c(it.x)
    q = eval_q(eval_a(g), it.lam, state.nu_bar)
    w, _ = eval_w(g, it.lam, eps * q)
    p = PenaltyParams(eps, state.nu_bar, cfg.eta)
    mgrad = eval_merit_gradient(problem, it, p, batch.gradbar, batch.hessbar, aset.mask)
    feas = math.hypot(np.linalg.norm(c), np.linalg.norm(w))
    if feas > np.linalg.norm(mgrad.full()) * (1.0 + 1e-12):
        raise AssertionError("step 2 feasibility bound violated after the eps loop")
