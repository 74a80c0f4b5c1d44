"""Benchmark harness: (solver x selector x stopping x budget) over paired trials.

Within a trial every cell runs on the same instance. Exact-selector cells run
first: their final support is the reference for ``agree_exact`` and the exact
CoSaMP residual is the reference for the relative stop of the other CoSaMP
cells. The exact CoSaMP reference runs the fixed-iteration protocol (K
iterations, residual tolerance only, no stagnation halt).
"""
from __future__ import annotations

import configparser
import csv
import json
import math
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

from pathlib import Path

import numpy as np

from .selectors import make_selector
from .solvers import COSAMP, FW, SOLVER_IDS, SolverConfig, solve
from .stopping import parse_stopping
from .synth import SUPPORT_THRESHOLD, f_measure, generate_problem, support_of

CSV_COLUMNS = ("trial", "solver", "selector", "stopping", "n", "d", "k", "snr", "f_measure",
               "residual", "iterations", "macs", "wall_time_ms", "agree_exact", "seed",
               "instance_hash")
BANDIT_STOP = "budget"


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class CellSpec:
    solver: str
    selector: str = "exact"
    stopping: str | None = None
    budget_ratio: float = 0.2
    rho: float | None = None
    max_iterations: int | None = None
    doubling: bool = False
    fw_step: str = "linesearch"
    fw_constraint: str = "l1_ball"
    name: str | None = None

    def __post_init__(self):
        if self.solver not in SOLVER_IDS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if not self.budget_ratio > 0:
            raise ValueError("budget ratio must be positive")
        make_selector(self.selector)  # validates the identifier
        if self.stopping is not None:
            parse_stopping(self.stopping)

    @property
    def is_bandit(self) -> bool:
        return make_selector(self.selector).is_bandit

    @property
    def stopping_id(self) -> str:
        if self.is_bandit:
            tag = f"{BANDIT_STOP}:{self.budget_ratio:g}"
            return tag + ",doubling" if self.doubling else tag
        if self.selector in ("exact",) or self.selector.startswith("stoch:"):
            return "full"
        return self.stopping or "stability-frac:2"

    @property
    def label(self) -> str:
        return self.name or f"{self.solver}/{self.selector}/{self.stopping_id}"

    def build_selector(self):
        stop = parse_stopping(self.stopping) if self.stopping else None
        return make_selector(self.selector, stop, budget_ratio=self.budget_ratio,
                             doubling=self.doubling)


@dataclass(frozen=True)
class ExperimentSpec:
    n: int = 500
    d: int = 1000
    ks: tuple = (20,)
    snr_db: float = 3.0
    trials: int = 20
    master_seed: int = 0
    cells: tuple = ()
    out: str | None = None
    jobs: int = 1
    fw_max_iterations: int = 5000
    gamma: float = SUPPORT_THRESHOLD

    def validate(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.cells:
            raise ValueError("no cells to run")
        for k in self.ks:
            if not 1 <= k <= self.d:
                raise ValueError(f"k={k} outside [1, d={self.d}]")
        return self


@dataclass
class TrialRecord:
    trial: int
    solver: str
    selector: str
    stopping: str
    n: int
    d: int
    k: int
    snr: float
    f_measure: float
    residual: float
    iterations: int
    macs: int
    wall_time_ms: float
    agree_exact: int
    seed: int
    instance_hash: str
    cell: str = ""
    budget_ratio: float | None = None
    stop_reason: str = ""
    status: str = "ok"
    error: str = ""
    work: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def csv_row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


def instance_seed(master_seed, trial, k) -> int:
    """64-bit seed of the instance for ``(master_seed, trial, k)``."""
    ss = np.random.SeedSequence([int(master_seed), int(trial), int(k)])
    return int(ss.generate_state(1, np.uint64)[0])


def _cell_rng(seed, label):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, zlib.crc32(label.encode())])))


def _solver_config(cell: CellSpec, spec: ExperimentSpec, problem, reference=None,
                   reference_protocol=False):
    rho = cell.rho if cell.rho is not None else float(np.abs(problem.w_star.coefficients).sum())
    max_it = cell.max_iterations
    if max_it is None and cell.solver == FW:
        max_it = spec.fw_max_iterations
    return SolverConfig(cell.solver, sparsity=problem.k, max_iterations=max_it,
                        fw_ball_radius=rho if rho > 0 else 1.0, fw_constraint=cell.fw_constraint,
                        fw_step=cell.fw_step, reference_residual=reference,
                        stagnation_window=10 ** 9 if reference_protocol else 3)


def _run_cell(cell, spec, problem, trial, seed, reference=None, reference_protocol=False):
    base = dict(trial=trial, solver=cell.solver, selector=cell.selector,
                stopping=cell.stopping_id, n=problem.n, d=problem.d, k=problem.k,
                snr=problem.snr_db, seed=seed, instance_hash=problem.instance_hash,
                cell=cell.label, budget_ratio=cell.budget_ratio if cell.is_bandit else None)
    t0 = time.perf_counter()
    try:
        config = _solver_config(cell, spec, problem, reference, reference_protocol)
        w, trace = solve(problem.X, problem.y, config, cell.build_selector(),
                         rng=_cell_rng(seed, cell.label))
        residual = float(np.linalg.norm(problem.X.data @ w.to_dense() - problem.y))
        rec = TrialRecord(f_measure=f_measure(problem.w_star, w, spec.gamma), residual=residual,
                          iterations=trace.iterations, macs=trace.macs,
                          wall_time_ms=1e3 * (time.perf_counter() - t0), agree_exact=-1,
                          stop_reason=trace.stop_reason, work=dict(trace.counter.by_category),
                          **base)
        return rec, w
    except Exception as exc:  # a failing cell must not abort the run
        rec = TrialRecord(f_measure=math.nan, residual=math.nan, iterations=0, macs=0,
                          wall_time_ms=1e3 * (time.perf_counter() - t0), agree_exact=-1,
                          status="failed", error=f"{type(exc).__name__}: {exc}", **base)
        return rec, None


def run_trial(spec: ExperimentSpec, trial: int) -> list:
    """All cells for one trial (every k of the sweep), exact cells first."""
    records = []
    for k in spec.ks:
        seed = instance_seed(spec.master_seed, trial, k)
        problem = generate_problem(spec.n, spec.d, k, spec.snr_db,
                                   rng=np.random.Generator(np.random.PCG64(seed)), seed=seed)
        order = sorted(range(len(spec.cells)), key=lambda i: spec.cells[i].selector != "exact")
        ref_support, ref_residual = {}, {}
        out = [None] * len(spec.cells)
        for i in order:
            cell = spec.cells[i]
            is_ref = cell.selector == "exact" and cell.solver not in ref_support
            reference = None if cell.selector == "exact" else ref_residual.get(cell.solver)
            rec, w = _run_cell(cell, spec, problem, trial, seed, reference,
                               reference_protocol=is_ref and cell.solver == COSAMP)
            if is_ref and w is not None:
                ref_support[cell.solver] = support_of(w, spec.gamma)
                ref_residual[cell.solver] = rec.residual
            if w is not None and cell.solver in ref_support:
                rec.agree_exact = int(support_of(w, spec.gamma) == ref_support[cell.solver])
            out[i] = rec
        records.extend(out)
    return records


class RecordSink:
    """CSV (fixed columns, header first) plus a JSON-lines mirror, flushed per trial."""

    def __init__(self, path):
        self.path = path
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self._csv = open(path, "w", newline="")
        self._writer = csv.writer(self._csv)
        self._writer.writerow(CSV_COLUMNS)
        jpath = path[:-4] + ".jsonl" if path.endswith(".csv") else path + ".jsonl"
        self.jsonl_path = jpath
        self._jsonl = open(jpath, "w")

    def write(self, records):
        for rec in records:
            self._writer.writerow(_csv_format(rec))
            self._jsonl.write(json.dumps(_json_safe(asdict(rec))) + "\n")
        self._csv.flush()
        self._jsonl.flush()

    def close(self):
        self._csv.close()
        self._jsonl.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _csv_format(rec):
    row = []
    for c in CSV_COLUMNS:
        v = getattr(rec, c)
        if isinstance(v, float):
            v = "nan" if math.isnan(v) else repr(round(v, 6) if c == "wall_time_ms" else v)
        row.append(v)
    return row


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    return obj


def _trial_worker(args):
    spec, trial = args
    return run_trial(spec, trial)


def run_experiment(spec: ExperimentSpec, sink: RecordSink | None = None):
    """Yield TrialRecords trial by trial; with ``jobs > 1`` trials run in worker processes.

    Output order (and content, apart from wall time) does not depend on ``jobs``.
    """
    spec.validate()
    if spec.jobs > 1:
        with ProcessPoolExecutor(max_workers=spec.jobs) as pool:
            batches = pool.map(_trial_worker, [(spec, t) for t in range(spec.trials)])
            for batch in batches:
                if sink is not None:
                    sink.write(batch)
                yield from batch
    else:
        for t in range(spec.trials):
            batch = run_trial(spec, t)
            if sink is not None:
                sink.write(batch)
            yield from batch


# ------------------------------------------------------------------- summary

def _mean_std(values):
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def summarize(records):
    """Per (solver, selector, stopping, k) cell: mean and sample std of F-measure,
    wall time and MACs, plus the MAC and wall-time speedup of the exact cell of the
    same solver and k. Failed records are counted but not averaged.
    """
    records = list(records)
    if not records:
        raise AggregationError("nothing to summarize")
    groups = {}
    for rec in records:
        groups.setdefault((rec.solver, rec.selector, rec.stopping, rec.k), []).append(rec)
    rows = []
    for key, recs in groups.items():
        sizes = {(r.n, r.d, r.snr) for r in recs}
        if len(sizes) > 1:
            raise AggregationError(f"cell {key} mixes problem sizes {sorted(sizes)}")
        ok = [r for r in recs if r.ok]
        n, d, snr = sizes.pop()
        row = dict(solver=key[0], selector=key[1], stopping=key[2], n=n, d=d, k=key[3],
                   snr=snr, trials=len(recs), failed=len(recs) - len(ok))
        if ok:
            row["f_mean"], row["f_std"] = _mean_std([r.f_measure for r in ok])
            row["time_ms_mean"], row["time_ms_std"] = _mean_std([r.wall_time_ms for r in ok])
            row["macs_mean"], row["macs_std"] = _mean_std([r.macs for r in ok])
        rows.append(row)
    for row in rows:
        ex = [o for o in rows if o["solver"] == row["solver"] and o["k"] == row["k"]
              and o["selector"] == "exact" and "macs_mean" in o]
        if ex and "macs_mean" in row:
            row["speedup_macs"] = ex[0]["macs_mean"] / row["macs_mean"]
            row["speedup_time"] = ex[0]["time_ms_mean"] / max(row["time_ms_mean"], 1e-12)
    return rows


SUMMARY_COLUMNS = ("solver", "selector", "stopping", "n", "d", "k", "snr", "trials", "failed",
                   "f_mean", "f_std", "time_ms_mean", "time_ms_std", "macs_mean", "macs_std",
                   "speedup_macs", "speedup_time")


def format_summary(rows) -> str:
    head = ["solver", "selector", "stopping", "k", "trials", "F (mean ± std)",
            "time ms (mean ± std)", "macs (mean ± std)", "speedup"]
    lines = []
    for r in rows:
        if "f_mean" not in r:
            lines.append([r["solver"], r["selector"], r["stopping"], str(r["k"]),
                          str(r["trials"]), "failed", "", "", ""])
            continue
        lines.append([r["solver"], r["selector"], r["stopping"], str(r["k"]), str(r["trials"]),
                      f"{r['f_mean']:.3f} ± {r['f_std']:.3f}",
                      f"{r['time_ms_mean']:.1f} ± {r['time_ms_std']:.1f}",
                      f"{r['macs_mean']:.3g} ± {r['macs_std']:.2g}",
                      f"{r['speedup_macs']:.2f}x" if "speedup_macs" in r else "-"])
    widths = [max(len(x) for x in col) for col in zip(head, *lines)]
    out = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    out += ["  ".join(x.ljust(w) for x, w in zip(line, widths)) for line in lines]
    return "\n".join(out)


def read_records(path):
    """Load TrialRecords from a bench CSV (failed rows come back with status ``failed``)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            f = float(row["f_measure"])
            out.append(TrialRecord(
                trial=int(row["trial"]), solver=row["solver"], selector=row["selector"],
                stopping=row["stopping"], n=int(row["n"]), d=int(row["d"]), k=int(row["k"]),
                snr=float(row["snr"]), f_measure=f, residual=float(row["residual"]),
                iterations=int(row["iterations"]), macs=int(row["macs"]),
                wall_time_ms=float(row["wall_time_ms"]), agree_exact=int(row["agree_exact"]),
                seed=int(row["seed"]), instance_hash=row["instance_hash"],
                status="failed" if math.isnan(f) else "ok"))
    return out


# -------------------------------------------------------------------- config

def _split(value, conv=str):
    return [conv(v.strip()) for v in str(value).split(",") if v.strip()]


def _cell_from_section(name, sec) -> CellSpec:
    rho = sec.get("rho")
    return CellSpec(
        solver=sec.get("solver", "omp"),
        selector=sec.get("selector", "exact"),
        stopping=sec.get("stopping"),
        budget_ratio=float(sec.get("budget_ratio", 0.2)),
        rho=None if rho in (None, "", "l1") else float(rho),
        max_iterations=int(sec["max_iterations"]) if "max_iterations" in sec else None,
        doubling=sec.getboolean("doubling", False),
        fw_step=sec.get("fw_step", "linesearch"),
        fw_constraint=sec.get("fw_constraint", "l1_ball"),
        name=name or None,
    )


def load_config(path) -> ExperimentSpec:
    """Read a bench config: ``[problem]``, optional ``[run]`` and one ``[cell <name>]`` per cell."""
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    prob = cp["problem"] if cp.has_section("problem") else {}
    run = cp["run"] if cp.has_section("run") else {}
    cells = []
    for sect in cp.sections():
        if sect == "cell" or sect.startswith("cell "):
            cells.append(_cell_from_section(sect[5:].strip(), cp[sect]))
    return ExperimentSpec(
        n=int(prob.get("n", 500)), d=int(prob.get("d", 1000)),
        ks=tuple(_split(prob.get("k", "20"), int)), snr_db=float(prob.get("snr", 3.0)),
        trials=int(prob.get("trials", 20)), master_seed=int(prob.get("seed", 0)),
        cells=tuple(cells), out=run.get("out"), jobs=int(run.get("jobs", 1)),
        fw_max_iterations=int(run.get("fw_max_iterations", 5000)),
        gamma=float(run.get("gamma", SUPPORT_THRESHOLD)),
    )


def cells_from_lists(solvers, selectors, stoppings=(None,), budget_ratios=(0.2,), rho=None,
                     max_iterations=None, doubling=False):
    """Cross product of solver x selector, with stoppings for accumulation
    selectors and budget ratios for bandits.
    """
    cells = []
    for solver in solvers:
        for sel in selectors:
            bandit = make_selector(sel).is_bandit
            if bandit:
                for b in budget_ratios:
                    cells.append(CellSpec(solver, sel, None, b, rho, max_iterations, doubling))
            elif sel == "exact" or sel.startswith("stoch:"):
                cells.append(CellSpec(solver, sel, None, 0.2, rho, max_iterations))
            else:
                for st in stoppings:
                    cells.append(CellSpec(solver, sel, st, 0.2, rho, max_iterations))
    return tuple(cells)


def with_overrides(spec: ExperimentSpec, **kw) -> ExperimentSpec:
    return replace(spec, **{k: v for k, v in kw.items() if v is not None})
