"""Non-adaptive local scheme: fixed eps, prescribed stepsizes, single samples.

Each iteration enlarges nu if the iterate has left the perturbed set, draws
two independent single samples (one for grad_x L, one for the Q matrices),
solves the coupled SQP system, and steps with the prescribed stepsize.  An
unsolvable system ends the run with status ``Divergent``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .directions import identify_active_set, solve_sqp_system
from .merit import Iterate, eval_a, eval_q, kkt_residual
from .problems import NoiseModel, ProblemDef, sample_batch
from .trace import IterationRecord, RunStatus, RunTrace, StepType

STREAM_XI1 = 1
STREAM_XI2 = 2


@dataclass(frozen=True)
class ConstStep:
    alpha: float

    def __call__(self, t: int) -> float:
        return self.alpha

    def label(self) -> str:
        return repr(self.alpha)


@dataclass(frozen=True)
class DecayStep:
    """alpha_t = t^(-p) with t counted from 1; needs p in (0.5, 1]."""

    p: float

    def __post_init__(self):
        if not (0.5 < self.p <= 1.0):
            raise ValueError("decay exponent must be in (0.5, 1]")

    def __call__(self, t: int) -> float:
        return float(t) ** (-self.p)

    def label(self) -> str:
        return f"t^-{self.p}"


StepRule = Union[ConstStep, DecayStep]


def parse_step_rule(token: str) -> StepRule:
    """Parse a stepsize token: a float for a constant, ``t^-P`` for decay."""
    token = token.strip()
    if token.startswith("t^-"):
        return DecayStep(float(token[3:]))
    return ConstStep(float(token))


@dataclass
class LocalConfig:
    epsilon: float = 1e-3
    stepsize: StepRule = ConstStep(0.1)
    max_iters: int = 100_000
    tol: float = 1e-5
    rho: float = 2.0  # factor of the nu enlargement rule
    b_rule: str = "identity"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.rho <= 1:
            raise ValueError("rho must exceed 1")


def run_local(problem: ProblemDef, noise: NoiseModel, cfg: LocalConfig) -> RunTrace:
    """Run the prescribed-stepsize scheme from the problem's initial iterate."""
    it = Iterate(problem.x0, problem.mu0, problem.lambda0)
    nu = 2.0 * eval_a(problem.eval_g(it.x)) + 1.0
    trace = RunTrace(problem=problem.name, method="nonadaptive", status=RunStatus.MAX_ITERS)
    alpha = float("nan")
    b_identity = np.eye(problem.dim_x)

    for t in range(1, cfg.max_iters + 1):
        r_exact = kkt_residual(problem, it)
        if not math.isfinite(r_exact):
            trace.status = RunStatus.DIVERGENT
            break
        if r_exact <= cfg.tol:
            trace.status = RunStatus.CONVERGED
            break

        g = problem.eval_g(it.x)
        a_x = eval_a(g)
        if a_x > nu / 2.0:
            j = max(1, math.ceil(math.log(2.0 * a_x / nu) / math.log(cfg.rho)))
            nu *= cfg.rho**j

        b1 = sample_batch(problem, noise, it.x, 1, (STREAM_XI1, t, 0))
        b2 = sample_batch(problem, noise, it.x, 1, (STREAM_XI2, t, 0))
        trace.total_samples += 2

        q = eval_q(a_x, it.lam, nu)
        aset = identify_active_set(g, it.lam, cfg.epsilon * q)
        B = problem.lagrangian_hessian(it.x, it.mu, it.lam) if cfg.b_rule == "lagrangian" \
            else b_identity
        dres = solve_sqp_system(problem, it, aset, B, b1.gradbar, b2.hessbar,
                                gradbar_for_q=b2.gradbar)
        trace.iters = t
        if not dres.solvable:
            trace.status = RunStatus.DIVERGENT
            break

        alpha = cfg.stepsize(t)
        rbar = kkt_residual(problem, it, grad_f=b1.gradbar)
        trace.records.append(IterationRecord(
            iter=t, kkt_residual_exact=r_exact, kkt_residual_est=rbar,
            step_type=StepType.FIXED, direction_kind=dres.kind,
            alpha_bar=alpha, eps_bar=cfg.epsilon, nu_bar=nu,
            delta_bar=float("nan"), batch1=1, batch2=1,
            merit_est=float("nan"), a_x=a_x, step_norm=dres.norm,
        ))

        if alpha * dres.norm <= cfg.tol:
            trace.status = RunStatus.CONVERGED
            break
        new = it.stacked() + alpha * dres.stacked()
        if not np.all(np.isfinite(new)):
            trace.status = RunStatus.DIVERGENT
            break
        d, m = problem.dim_x, problem.dim_eq
        it = Iterate(new[:d], new[d:d + m], new[d + m:])

    trace.x, trace.mu, trace.lam = it.x, it.mu, it.lam
    terminal = kkt_residual(problem, it)
    trace.terminal_kkt_residual = terminal if math.isfinite(terminal) else float("inf")
    trace.final_alpha = alpha
    trace.final_eps = cfg.epsilon
    trace.final_nu = nu
    trace.final_delta = float("nan")
    return trace
