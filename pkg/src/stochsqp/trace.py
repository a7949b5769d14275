"""Per-iteration records and run traces shared by the two solvers."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .directions import DirectionKind

Array = np.ndarray


class RunStatus(enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    DIVERGENT = "Divergent"
    CONVERGED_BATCH_CAP = "ConvergedByBatchCap"


class StepType(enum.Enum):
    RELIABLE = "Reliable"
    UNRELIABLE = "Unreliable"
    UNSUCCESSFUL = "Unsuccessful"
    NU_INCREASE = "NuIncrease"
    FIXED = "Fixed"  # prescribed-stepsize scheme: no line search


@dataclass
class IterationRecord:
    """Snapshot of iteration ``iter`` taken before the state update.

    ``alpha_bar``/``nu_bar``/``delta_bar`` are the values the iteration ran
    with; ``eps_bar`` is the value after the epsilon-setting loop.  Fields
    that an iteration does not produce (e.g. ``merit_est`` on a nu-increase)
    hold NaN or 0.
    """

    iter: int
    kkt_residual_exact: float
    kkt_residual_est: float
    step_type: StepType
    direction_kind: DirectionKind
    alpha_bar: float
    eps_bar: float
    nu_bar: float
    delta_bar: float
    batch1: int
    batch2: int
    merit_est: float
    a_x: float = float("nan")
    step_norm: float = float("nan")
    descent_lhs1: float = float("nan")
    descent_lhs2: float = float("nan")
    descent_rhs: float = float("nan")


@dataclass
class RunTrace:
    """Full outcome of one solver run."""

    problem: str
    method: str
    status: RunStatus
    records: list[IterationRecord] = field(default_factory=list)
    x: Array | None = None
    mu: Array | None = None
    lam: Array | None = None
    iters: int = 0
    total_samples: int = 0
    terminal_kkt_residual: float = float("nan")
    final_alpha: float = float("nan")
    final_eps: float = float("nan")
    final_nu: float = float("nan")
    final_delta: float = float("nan")
