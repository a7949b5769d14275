"""Command-line benchmark runner.

Example:

    stochsqp-bench --problems p1,p2 --methods adaptive-newton \\
        --sigma2 1e-8,1e-2 --seeds 0,1 --out results.csv --summary -

Unknown identifiers exit with a usage error; solver non-convergence is data,
not a failure, so the exit code stays 0.
"""
from __future__ import annotations

import argparse
import sys

from . import bench
from .problems import problem_names


def _csv_list(text: str) -> list[str]:
    return [tok for tok in (t.strip() for t in text.split(",")) if tok]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochsqp-bench",
        description="Run the noise-injection benchmark over the built-in problem suite.",
    )
    parser.add_argument("--problems", default=",".join(problem_names()),
                        help="comma-separated problem names (default: full suite)")
    parser.add_argument("--methods", default=",".join(bench.METHODS),
                        help="comma-separated subset of: " + ", ".join(bench.METHODS))
    parser.add_argument("--sigma2", default=",".join(repr(s) for s in bench.DEFAULT_SIGMA2),
                        help="comma-separated noise variances")
    parser.add_argument("--seeds", default="0,1,2,3,4",
                        help="comma-separated integer seeds")
    parser.add_argument("--stepsizes", default=",".join(bench.DEFAULT_STEPSIZES),
                        help="nonadaptive stepsize grid; floats or t^-P tokens")
    parser.add_argument("--max-iters", type=int, default=100_000)
    parser.add_argument("--tol", type=float, default=1e-5)
    parser.add_argument("--out", default=None, help="result path ('-' for stdout)")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    parser.add_argument("--summary", default=None,
                        help="summary CSV path ('-' prints a table to stdout)")
    parser.add_argument("--jobs", type=int, default=1, help="concurrent cells")
    parser.add_argument("--progress", action="store_true", help="report cells as they finish")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        plan = bench.ExperimentPlan(
            problems=tuple(_csv_list(args.problems)),
            methods=tuple(_csv_list(args.methods)),
            sigma2_levels=tuple(float(s) for s in _csv_list(args.sigma2)),
            seeds=tuple(int(s) for s in _csv_list(args.seeds)),
            stepsizes=tuple(_csv_list(args.stepsizes)),
            max_iters=args.max_iters,
            tol=args.tol,
            jobs=args.jobs,
        )
    except (bench.PlanError, ValueError) as exc:
        parser.error(str(exc))  # exits with code 2

    progress = None
    if args.progress:
        def progress(done, total):
            print(f"\r{done}/{total} cells", end="", file=sys.stderr, flush=True)

    rows = bench.run_plan(plan, progress=progress)
    if args.progress:
        print(file=sys.stderr)

    if args.out is not None:
        payload = bench.rows_to_json(rows) if args.format == "json" else bench.rows_to_csv(rows)
        if args.out == "-":
            sys.stdout.write(payload)
        else:
            with open(args.out, "w", encoding="utf-8") as fh:
                fh.write(payload)
            print(f"wrote {len(rows)} rows to {args.out}")

    if args.summary is not None:
        summary = bench.summarize(rows)
        if args.summary == "-":
            print(bench.summary_table(summary))
        else:
            with open(args.summary, "w", encoding="utf-8") as fh:
                fh.write(bench.summary_to_csv(summary))
            print(f"wrote summary to {args.summary}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
