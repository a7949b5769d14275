"""Benchmark runner: methods x noise levels x seeds over the built-in suite.

Every cell of the plan is an independent solver run whose noise seed is
derived from the cell coordinates, so results do not depend on execution
order or on the ``--jobs`` setting.  Rows serialize to CSV (header below) or
to a JSON mirror with identical field names; floats use the shortest
round-trip decimal form.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import adaptive, local
from .local import StepRule, parse_step_rule
from .problems import NoiseModel, get_problem, problem_names
from .trace import RunStatus, RunTrace

CSV_HEADER = [
    "problem", "method", "sigma2", "seed", "stepsize", "status", "iters",
    "terminal_kkt_residual", "terminal_alpha", "eps_final", "nu_final",
    "total_samples", "wallclock_ms",
]

METHODS = ("adaptive-newton", "adaptive-gd", "nonadaptive")

DEFAULT_SIGMA2 = (1e-8, 1e-4, 1e-2, 1e-1, 1.0)
DEFAULT_STEPSIZES = ("0.01", "0.1", "0.5", "1", "t^-0.6", "t^-0.9")

# statuses counted as convergence; the batch-cap exit signals a vanishing
# residual and is treated as convergence by the driver
CONVERGED_STATUSES = frozenset({RunStatus.CONVERGED, RunStatus.CONVERGED_BATCH_CAP})


class PlanError(ValueError):
    """Invalid experiment plan (unknown identifiers, empty axes)."""


@dataclass(frozen=True)
class ExperimentPlan:
    problems: tuple[str, ...]
    methods: tuple[str, ...]
    sigma2_levels: tuple[float, ...]
    seeds: tuple[int, ...]
    stepsizes: tuple[str, ...] = DEFAULT_STEPSIZES
    max_iters: int = 100_000
    tol: float = 1e-5
    nonadaptive_epsilon: float = 1e-3
    jobs: int = 1

    def __post_init__(self):
        if not (self.problems and self.methods and self.seeds):
            raise PlanError("plan needs nonempty problems, methods, and seeds")
        if not self.sigma2_levels:
            raise PlanError("plan needs at least one sigma2 level")
        known = set(problem_names())
        for p in self.problems:
            if p not in known:
                raise PlanError(f"unknown problem {p!r}; available: {', '.join(sorted(known))}")
        for m in self.methods:
            if m not in METHODS:
                raise PlanError(f"unknown method {m!r}; available: {', '.join(METHODS)}")
        for s in self.stepsizes:
            parse_step_rule(s)  # raises on malformed tokens
        if "nonadaptive" in self.methods and not self.stepsizes:
            raise PlanError("nonadaptive method needs a stepsize grid")


@dataclass
class ResultRow:
    problem: str
    method: str
    sigma2: float
    seed: int
    stepsize: str
    status: str
    iters: int
    terminal_kkt_residual: float
    terminal_alpha: float
    eps_final: float
    nu_final: float
    total_samples: int
    wallclock_ms: float


@dataclass(frozen=True)
class Cell:
    problem: str
    method: str
    sigma2: float
    seed: int
    stepsize: str  # empty for the adaptive methods


def plan_cells(plan: ExperimentPlan) -> list[Cell]:
    """Deterministic cell order: problem, method, sigma2, seed[, stepsize]."""
    cells = []
    for prob in plan.problems:
        for method in plan.methods:
            for sigma2 in plan.sigma2_levels:
                for seed in plan.seeds:
                    if method == "nonadaptive":
                        for step in plan.stepsizes:
                            cells.append(Cell(prob, method, sigma2, seed, step))
                    else:
                        cells.append(Cell(prob, method, sigma2, seed, ""))
    return cells


def derive_noise_seed(cell: Cell) -> int:
    """Stable 63-bit seed from the cell coordinates."""
    key = f"{cell.problem}|{cell.method}|{cell.sigma2!r}|{cell.seed}|{cell.stepsize}"
    digest = hashlib.sha256(key.encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def run_cell(cell: Cell, plan: ExperimentPlan) -> tuple[ResultRow, RunTrace]:
    """Execute one cell; returns the serialized row and the full trace."""
    problem = get_problem(cell.problem)
    noise = NoiseModel(sigma2=cell.sigma2, seed=derive_noise_seed(cell))
    start = time.perf_counter()
    if cell.method == "nonadaptive":
        cfg = local.LocalConfig(
            epsilon=plan.nonadaptive_epsilon,
            stepsize=parse_step_rule(cell.stepsize),
            max_iters=plan.max_iters,
            tol=plan.tol,
        )
        trace = local.run_local(problem, noise, cfg)
        terminal_alpha = trace.final_alpha
    else:
        fb = adaptive.Fallback.REG_NEWTON if cell.method == "adaptive-newton" \
            else adaptive.Fallback.STEEPEST_DESCENT
        cfg = adaptive.AdaptiveConfig(fallback=fb, max_iters=plan.max_iters, tol=plan.tol)
        trace = adaptive.run(problem, noise, cfg)
        terminal_alpha = trace.final_alpha
    elapsed_ms = (time.perf_counter() - start) * 1e3
    row = ResultRow(
        problem=cell.problem,
        method=cell.method,
        sigma2=cell.sigma2,
        seed=cell.seed,
        stepsize=cell.stepsize,
        status=trace.status.value,
        iters=trace.iters,
        terminal_kkt_residual=trace.terminal_kkt_residual,
        terminal_alpha=terminal_alpha,
        eps_final=trace.final_eps,
        nu_final=trace.final_nu,
        total_samples=trace.total_samples,
        wallclock_ms=elapsed_ms,
    )
    return row, trace


def _run_cell_worker(args: tuple[Cell, ExperimentPlan]) -> ResultRow:
    row, _ = run_cell(*args)
    return row


def run_plan(plan: ExperimentPlan, progress=None) -> list[ResultRow]:
    """Run every cell of the plan, in its deterministic order.

    With ``plan.jobs > 1`` the cells execute in a process pool; outputs keep
    the plan order regardless of completion order.
    """
    cells = plan_cells(plan)
    if plan.jobs <= 1:
        rows = []
        for cell in cells:
            rows.append(_run_cell_worker((cell, plan)))
            if progress is not None:
                progress(len(rows), len(cells))
        return rows
    rows = [None] * len(cells)
    with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
        for i, row in enumerate(pool.map(_run_cell_worker, [(c, plan) for c in cells])):
            rows[i] = row
            if progress is not None:
                progress(i + 1, len(cells))
    return rows


# ------------------------------------------------------------------
# serialization
# ------------------------------------------------------------------

def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_format_value(getattr(row, name)) for name in CSV_HEADER])
    return buf.getvalue()


def rows_from_csv(text: str) -> list[ResultRow]:
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        rows.append(ResultRow(
            problem=rec["problem"],
            method=rec["method"],
            sigma2=float(rec["sigma2"]),
            seed=int(rec["seed"]),
            stepsize=rec["stepsize"],
            status=rec["status"],
            iters=int(rec["iters"]),
            terminal_kkt_residual=float(rec["terminal_kkt_residual"]),
            terminal_alpha=float(rec["terminal_alpha"]),
            eps_final=float(rec["eps_final"]),
            nu_final=float(rec["nu_final"]),
            total_samples=int(rec["total_samples"]),
            wallclock_ms=float(rec["wallclock_ms"]),
        ))
    return rows


def rows_to_json(rows: list[ResultRow]) -> str:
    payload = [{name: getattr(row, name) for name in CSV_HEADER} for row in rows]
    return json.dumps(payload, indent=2)


# ------------------------------------------------------------------
# summaries
# ------------------------------------------------------------------

@dataclass
class SummaryRow:
    method: str
    sigma2: float
    n_cells: int
    residual_q25: float
    residual_median: float
    residual_q75: float
    convergence_rate: float
    median_wallclock_ms: float


def summarize(rows: list[ResultRow]) -> list[SummaryRow]:
    """Per (method, sigma2): residual quartiles, convergence rate, wallclock."""
    if not rows:
        raise ValueError("summarize needs at least one row")
    groups: dict[tuple[str, float], list[ResultRow]] = {}
    for row in rows:
        groups.setdefault((row.method, row.sigma2), []).append(row)
    out = []
    for (method, sigma2) in sorted(groups):
        grp = groups[(method, sigma2)]
        res = np.array([r.terminal_kkt_residual for r in grp])
        finite = res[np.isfinite(res)]
        q25, med, q75 = (np.percentile(finite, [25, 50, 75]) if finite.size
                         else (float("inf"),) * 3)
        conv = sum(r.status in {s.value for s in CONVERGED_STATUSES} for r in grp)
        out.append(SummaryRow(
            method=method,
            sigma2=sigma2,
            n_cells=len(grp),
            residual_q25=float(q25),
            residual_median=float(med),
            residual_q75=float(q75),
            convergence_rate=conv / len(grp),
            median_wallclock_ms=float(np.median([r.wallclock_ms for r in grp])),
        ))
    return out


def summary_to_csv(summary: list[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    names = [f.name for f in fields(SummaryRow)]
    writer.writerow(names)
    for row in summary:
        writer.writerow([_format_value(getattr(row, name)) for name in names])
    return buf.getvalue()


def summary_table(summary: list[SummaryRow]) -> str:
    header = f"{'method':<16} {'sigma2':>10} {'cells':>5} {'median R':>12} {'IQR':>26} {'conv':>6} {'ms':>10}"
    lines = [header, "-" * len(header)]
    for s in summary:
        iqr = f"[{s.residual_q25:.3e}, {s.residual_q75:.3e}]"
        lines.append(
            f"{s.method:<16} {s.sigma2:>10.3g} {s.n_cells:>5d} {s.residual_median:>12.3e} "
            f"{iqr:>26} {s.convergence_rate:>6.0%} {s.median_wallclock_ms:>10.1f}"
        )
    return "\n".join(lines)
