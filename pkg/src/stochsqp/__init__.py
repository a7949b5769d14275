"""Active-set stochastic SQP with an exact differentiable augmented Lagrangian.

The package splits into the problem model (:mod:`stochsqp.problems`), the
merit-function machinery (:mod:`stochsqp.merit`), direction computations
(:mod:`stochsqp.directions`), the adaptive and non-adaptive solvers
(:mod:`stochsqp.adaptive`, :mod:`stochsqp.local`), and the benchmark runner
(:mod:`stochsqp.bench`) behind the ``stochsqp-bench`` CLI.
"""

from .adaptive import AdaptiveConfig, Fallback, run
from .directions import (
    ActiveSet,
    DirectionKind,
    DirectionResult,
    build_reg_newton_matrix,
    identify_active_set,
    solve_fallback,
    solve_sqp_system,
)
from .local import ConstStep, DecayStep, LocalConfig, run_local
from .merit import (
    Iterate,
    MeritEval,
    MeritGradient,
    OutOfPerturbedSet,
    PenaltyParams,
    eval_a,
    eval_merit,
    eval_merit_gradient,
    eval_q,
    eval_w,
    kkt_residual,
)
from .problems import NoiseModel, OracleBatch, ProblemDef, builtin_suite, get_problem, sample_batch
from .trace import IterationRecord, RunStatus, RunTrace, StepType

__all__ = [
    "ActiveSet",
    "AdaptiveConfig",
    "ConstStep",
    "DecayStep",
    "DirectionKind",
    "DirectionResult",
    "Fallback",
    "IterationRecord",
    "Iterate",
    "LocalConfig",
    "MeritEval",
    "MeritGradient",
    "NoiseModel",
    "OracleBatch",
    "OutOfPerturbedSet",
    "PenaltyParams",
    "ProblemDef",
    "RunStatus",
    "RunTrace",
    "StepType",
    "build_reg_newton_matrix",
    "builtin_suite",
    "eval_a",
    "eval_merit",
    "eval_merit_gradient",
    "eval_q",
    "eval_w",
    "get_problem",
    "identify_active_set",
    "kkt_residual",
    "run",
    "run_local",
    "run_plan",
    "sample_batch",
    "solve_fallback",
    "solve_sqp_system",
]

from .bench import ExperimentPlan, ResultRow, run_plan, summarize  # noqa: E402

__version__ = "0.1.0"
