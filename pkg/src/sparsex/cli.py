"""Command-line entry point: ``sparsex {bench,summarize,generate,solve}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import bench as B
from .core import DesignMatrix
from .io import export_instance, load_matrix, load_vector
from .selectors import make_selector
from .solvers import SOLVER_IDS, SolverConfig, solve
from .stopping import parse_stopping
from .synth import generate_problem, trial_rng


def _csv_list(conv=str):
    def parse(text):
        return [conv(v.strip()) for v in text.split(",") if v.strip()]
    return parse


def _add_bench(sub):
    p = sub.add_parser("bench", help="run the solver x selector x stopping matrix")
    p.add_argument("--config", help="INI file with [problem], [run] and [cell <name>] sections")
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--k", type=_csv_list(int), help="sparsity level(s), comma separated")
    p.add_argument("--snr", type=float, help="SNR in dB")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--solver", type=_csv_list(), help=f"one or more of {','.join(SOLVER_IDS)}")
    p.add_argument("--selector", type=_csv_list(), help="selector identifier(s)")
    p.add_argument("--stopping", type=_csv_list(),
                   help="stopping rule(s) for greedy/uniform/importance")
    p.add_argument("--budget-ratio", type=_csv_list(float), help="bandit budget ratio(s)")
    p.add_argument("--doubling", action="store_true", help="doubling trick for bandits")
    p.add_argument("--rho", type=float, help="FW l1-ball radius (default ||w*||_1)")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="CSV output path (a .jsonl mirror is written alongside)")
    p.add_argument("--quiet", action="store_true", help="do not print the summary table")


def _spec_from_args(args) -> B.ExperimentSpec:
    spec = B.load_config(args.config) if args.config else B.ExperimentSpec()
    spec = B.with_overrides(spec, n=args.n, d=args.d, snr_db=args.snr, trials=args.trials,
                            master_seed=args.seed, jobs=args.jobs, out=args.out,
                            ks=tuple(args.k) if args.k else None)
    cell_args = (args.solver, args.selector, args.stopping, args.budget_ratio, args.rho,
                 args.max_iterations)
    if not spec.cells or any(a is not None for a in cell_args) or args.doubling:
        base = spec.cells
        solvers = args.solver or sorted({c.solver for c in base}) or ["omp"]
        selectors = args.selector or list(dict.fromkeys(c.selector for c in base)) or ["exact"]
        cells = B.cells_from_lists(solvers, selectors, stoppings=args.stopping or [None],
                                   budget_ratios=args.budget_ratio or [0.2], rho=args.rho,
                                   max_iterations=args.max_iterations, doubling=args.doubling)
        spec = B.with_overrides(spec, cells=cells)
    return spec


def cmd_bench(args) -> int:
    spec = _spec_from_args(args).validate()
    out = spec.out or "bench.csv"
    records = []
    with B.RecordSink(out) as sink:
        for rec in B.run_experiment(spec, sink):
            records.append(rec)
            if not rec.ok:
                print(f"trial {rec.trial} cell {rec.cell} failed: {rec.error}", file=sys.stderr)
    if not args.quiet:
        print(B.format_summary(B.summarize(records)))
    print(f"wrote {len(records)} records to {out} and {sink.jsonl_path}")
    return 2 if any(not r.ok for r in records) else 0


def cmd_summarize(args) -> int:
    rows = B.summarize(B.read_records(args.csv))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=B.SUMMARY_COLUMNS, restval="")
            w.writeheader()
            w.writerows(rows)
    print(B.format_summary(rows))
    return 0


def cmd_generate(args) -> int:
    rng = trial_rng(args.seed, args.trial)
    problem = generate_problem(args.n, args.d, args.k, args.snr, rng=rng, seed=args.seed)
    paths = export_instance(problem, args.out)
    with open(paths["meta"]) as fh:
        meta = json.load(fh)
    meta["trial"] = args.trial
    with open(paths["meta"], "w") as fh:
        fh.write(json.dumps(meta, indent=2) + "\n")
    print(json.dumps({"instance_hash": problem.instance_hash, **paths}))
    return 0


def cmd_solve(args) -> int:
    X = DesignMatrix.from_array(load_matrix(args.X))
    y = load_vector(args.y)
    if y.shape[0] != X.n:
        print(f"y has {y.shape[0]} entries but X has {X.n} rows", file=sys.stderr)
        return 1
    stop = parse_stopping(args.stopping) if args.stopping else None
    selector = make_selector(args.selector, stop, budget_ratio=args.budget_ratio,
                             doubling=args.doubling)
    config = SolverConfig(args.solver, sparsity=args.k, max_iterations=args.max_iterations,
                          fw_ball_radius=args.rho, fw_constraint=args.constraint,
                          fw_step=args.step)
    rng = np.random.Generator(np.random.PCG64(args.seed))
    w, trace = solve(X, y, config, selector, rng=rng)
    if args.trace:
        trace.to_csv(args.trace)
    result = {
        "support": w.support.tolist(), "coefficients": w.coefficients.tolist(),
        "objective": trace.objectives[-1] if trace.records else 0.5 * float(y @ y),
        "iterations": trace.iterations, "macs": trace.macs, "stop_reason": trace.stop_reason,
        "work": trace.counter.by_category,
    }
    text = json.dumps(result, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsex", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_bench(sub)

    p = sub.add_parser("summarize", help="aggregate a bench CSV")
    p.add_argument("csv")
    p.add_argument("--out", help="write the aggregate table as CSV")

    p = sub.add_parser("generate", help="export a synthetic instance as SXGM + JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--snr", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", required=True, help="output stem")

    p = sub.add_parser("solve", help="run one solver on a user-supplied X (SXGM or CSV) and y")
    p.add_argument("X")
    p.add_argument("y")
    p.add_argument("--solver", choices=SOLVER_IDS, default="omp")
    p.add_argument("--k", type=int, required=True, help="sparsity K")
    p.add_argument("--selector", default="exact")
    p.add_argument("--stopping")
    p.add_argument("--budget-ratio", type=float, default=0.2)
    p.add_argument("--doubling", action="store_true")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--constraint", choices=("l1_ball", "simplex"), default="l1_ball")
    p.add_argument("--step", choices=("linesearch", "harmonic"), default="linesearch")
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="per-iteration CSV")
    p.add_argument("--out", help="write the result JSON here")
    return parser


COMMANDS = {"bench": cmd_bench, "summarize": cmd_summarize, "generate": cmd_generate,
            "solve": cmd_solve}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"sparsex {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
