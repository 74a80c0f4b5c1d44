"""Sparsity-constrained least-squares solvers driven by a pluggable selector."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ContractError,
    DesignMatrix,
    SparseIterate,
    WorkCounter,
    compute_residual,
    restricted_least_squares,
)
from .selectors import SelectorMode, make_selector

OMP = "omp"
FW = "fw"
COSAMP = "cosamp"
SOLVER_IDS = (OMP, FW, COSAMP)

L1_BALL = "l1_ball"
SIMPLEX = "simplex"
EXACT_LINESEARCH = "linesearch"
HARMONIC = "harmonic"


@dataclass(frozen=True)
class SolverConfig:
    algorithm: str = OMP
    sparsity: int = 1
    max_iterations: int | None = None
    fw_ball_radius: float = 1.0
    fw_constraint: str = L1_BALL
    fw_step: str = EXACT_LINESEARCH
    cosamp_tolerance: float = 1e-3
    cosamp_relative_stop: float = 1.001
    reference_residual: float | None = None
    stagnation_window: int = 3

    def __post_init__(self):
        if self.algorithm not in SOLVER_IDS:
            raise ValueError(f"unknown solver {self.algorithm!r}")
        if self.sparsity < 1:
            raise ValueError("sparsity must be positive")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not (np.isfinite(self.fw_ball_radius) and self.fw_ball_radius > 0):
            raise ValueError("the l1-ball radius must be finite and positive")
        if self.fw_constraint not in (L1_BALL, SIMPLEX):
            raise ValueError(f"unknown constraint {self.fw_constraint!r}")
        if self.fw_step not in (EXACT_LINESEARCH, HARMONIC):
            raise ValueError(f"unknown step rule {self.fw_step!r}")


@dataclass
class IterationRecord:
    iteration: int
    indices: tuple
    objective: float
    residual_norm: float
    macs: int
    wall_time: float


@dataclass
class SolveTrace:
    records: list = field(default_factory=list)
    final: SparseIterate | None = None
    counter: WorkCounter = field(default_factory=WorkCounter)
    stop_reason: str = ""
    flags: dict = field(default_factory=dict)

    @property
    def macs(self) -> int:
        return self.counter.total

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def objectives(self):
        return [rec.objective for rec in self.records]

    def to_csv(self, path_or_file):
        header = ["iteration", "indices", "objective", "residual_norm", "macs", "wall_time"]
        own = isinstance(path_or_file, str)
        fh = open(path_or_file, "w", newline="") if own else path_or_file
        try:
            w = csv.writer(fh)
            w.writerow(header)
            for rec in self.records:
                w.writerow([rec.iteration, " ".join(map(str, rec.indices)),
                            repr(rec.objective), repr(rec.residual_norm), rec.macs,
                            f"{rec.wall_time:.6f}"])
        finally:
            if own:
                fh.close()


class _Run:
    """Per-run bookkeeping: counter, clock and optional streaming callback."""

    def __init__(self, counter, on_iteration):
        self.trace = SolveTrace(counter=counter if counter is not None else WorkCounter())
        self.t0 = time.perf_counter()
        self.on_iteration = on_iteration

    def charge_selector(self, out):
        c = self.trace.counter
        sort = out.meta.get("sort_macs", 0)
        stab = out.meta.get("stability_macs", 0)
        c.charge(out.macs - sort - stab, "selector")
        if sort:
            c.charge(sort, "sort")
        if stab:
            c.charge(stab, "stability")

    def record(self, indices, residual):
        rn = float(np.linalg.norm(residual))
        rec = IterationRecord(len(self.trace.records), tuple(int(j) for j in indices),
                              0.5 * rn * rn, rn, self.trace.counter.total,
                              time.perf_counter() - self.t0)
        self.trace.records.append(rec)
        if self.on_iteration is not None:
            self.on_iteration(rec)
        return rec


def _as_selector(selector):
    return make_selector(selector) if isinstance(selector, str) else selector


# ------------------------------------------------------------------ OMP / GP

def gradient_pursuit(X: DesignMatrix, y, K, selector="exact", *, rng=None, counter=None,
                     on_iteration=None):
    """Gradient pursuit (OMP for least squares): K greedy atom additions.

    If the selector proposes an atom already in the support, it is queried
    again with the active atoms masked.
    """
    selector = _as_selector(selector)
    n, d = X.shape
    if K > min(n, d):
        raise ContractError(f"K={K} exceeds min(n, d)={min(n, d)}")
    y = np.asarray(y, dtype=np.float64)
    run = _Run(counter, on_iteration)
    mode = SelectorMode.max_abs()
    w = SparseIterate.zeros(d)
    support: list[int] = []
    run.trace.stop_reason = "max_iterations"
    for _ in range(K):
        r = compute_residual(X, y, w, run.trace.counter)
        out = selector(X, r, mode, rng=rng)
        run.charge_selector(out)
        if out.zero_gradient:
            run.trace.stop_reason = "zero_gradient"
            break
        j = out.index
        retries = 0
        while j in support and retries < d:
            retries += 1
            out = selector(X, r, mode, rng=rng, exclude=support)
            run.charge_selector(out)
            j = out.index
        if j in support:
            run.trace.stop_reason = "duplicate_selection"
            break
        run.trace.flags["requeries"] = run.trace.flags.get("requeries", 0) + retries
        support.append(j)
        w, info = restricted_least_squares(X, y, support, run.trace.counter)
        if info.rank_deficient:
            run.trace.flags["rank_deficient"] = True
        run.record([j], X.columns(w.support) @ w.coefficients - y if w.nnz else -y)
    run.trace.final = w
    run.trace.flags["support_order"] = list(support)
    return w, run.trace


# ---------------------------------------------------------------- Frank-Wolfe

def lmo(entry, constraint=L1_BALL, radius=1.0):
    """Linear minimization over the l1 ball of ``radius`` or the unit simplex.

    ``entry`` is ``(j, g_j)``. Returns ``(j, coefficient, flagged)`` where the
    atom is ``coefficient * e_j``; ``flagged`` marks a zero gradient entry on
    the l1 ball, resolved to ``+radius``.
    """
    j, g = entry
    if constraint == SIMPLEX:
        return int(j), 1.0, False
    if constraint != L1_BALL:
        raise ValueError(f"unknown constraint {constraint!r}")
    if g == 0:
        return int(j), float(radius), True
    return int(j), -float(radius) * float(np.sign(g)), False


def frank_wolfe(X: DesignMatrix, y, config: SolverConfig, selector="exact", *, rng=None,
                counter=None, on_iteration=None):
    """Frank-Wolfe over the l1 ball or the simplex with a selector-based LMO.

    The atom sign on the l1 ball comes from the selector's estimate at the
    chosen coordinate. ``Xw`` is updated in place each iteration (n MACs for
    the new atom column, n for the update, 2n for the line search).
    """
    selector = _as_selector(selector)
    n, d = X.shape
    y = np.asarray(y, dtype=np.float64)
    run = _Run(counter, on_iteration)
    c = run.trace.counter
    mode = SelectorMode.max_abs() if config.fw_constraint == L1_BALL else SelectorMode.min()
    max_it = config.max_iterations or 1000
    w = np.zeros(d)
    Xw = np.zeros(n)
    r = -y
    run.trace.stop_reason = "max_iterations"
    flagged = 0
    for k in range(max_it):
        out = selector(X, r, mode, rng=rng)
        run.charge_selector(out)
        if out.zero_gradient:
            run.trace.stop_reason = "zero_gradient"
            break
        j, coef, flag = lmo((out.index, out.scores[0]), config.fw_constraint,
                            config.fw_ball_radius)
        flagged += flag
        direction = coef * X.data[:, j] - Xw
        c.charge(n, "residual")
        if config.fw_step == HARMONIC:
            gamma = 2.0 / (k + 2.0)
        else:
            dd = float(direction @ direction)
            c.charge(2 * n, "residual")
            gamma = 0.0 if dd == 0.0 else min(1.0, max(0.0, -float(r @ direction) / dd))
        if gamma > 0.0:
            w *= 1.0 - gamma
            w[j] += gamma * coef
            Xw += gamma * direction
            c.charge(n, "residual")
            r = Xw - y
        run.record([j], r)
    if flagged:
        run.trace.flags["zero_entry_atoms"] = flagged
    final = SparseIterate.from_dense(w)
    run.trace.final = final
    return final, run.trace


# -------------------------------------------------------------------- CoSaMP

def _top_k_abs(it: SparseIterate, K):
    order = np.lexsort((it.support, -np.abs(it.coefficients)))
    return np.sort(it.support[order[:K]])


def cosamp(X: DesignMatrix, y, K, selector="exact", config: SolverConfig | None = None, *,
           rng=None, counter=None, on_iteration=None):
    """CoSaMP with the top-2K gradient entries supplied by the selector.

    Each iteration merges the selected entries with the current support,
    solves least squares on the union, prunes to the K largest coefficients
    and re-solves on the pruned support. A candidate that does not lower the
    residual is discarded (the previous iterate is kept); ``stagnation_window``
    consecutive non-decreasing residuals halt the run.

    Stops on ``||r|| <= cosamp_tolerance``, on ``||r|| <= cosamp_relative_stop
    * reference_residual`` when a reference is given, on stagnation, or after
    ``max_iterations`` (default K).
    """
    selector = _as_selector(selector)
    config = config or SolverConfig(COSAMP, sparsity=K)
    n, d = X.shape
    if K > min(n, d):
        raise ContractError(f"K={K} exceeds min(n, d)={min(n, d)}")
    y = np.asarray(y, dtype=np.float64)
    run = _Run(counter, on_iteration)
    c = run.trace.counter
    mode = SelectorMode.top_m(min(2 * K, d))
    max_it = config.max_iterations or K
    ref = config.reference_residual

    w = SparseIterate.zeros(d)
    r = compute_residual(X, y, w, c)
    rnorm = float(np.linalg.norm(r))

    def reached():
        if rnorm <= config.cosamp_tolerance:
            return "tolerance"
        if ref is not None and rnorm <= config.cosamp_relative_stop * ref:
            return "relative"
        return None

    reason = reached()
    stagnant = 0
    for _ in range(max_it):
        if reason:
            break
        out = selector(X, r, mode, rng=rng)
        run.charge_selector(out)
        if out.zero_gradient:
            reason = "zero_gradient"
            break
        omega = np.union1d(np.asarray(out.indices, dtype=np.intp), w.support)
        b, info = restricted_least_squares(X, y, omega, c)
        pruned = _top_k_abs(b, K)
        cand, info2 = restricted_least_squares(X, y, pruned, c)
        if info.rank_deficient or info2.rank_deficient:
            run.trace.flags["rank_deficient"] = True
        r_cand = compute_residual(X, y, cand, c)
        n_cand = float(np.linalg.norm(r_cand))
        if n_cand < rnorm:
            w, r, rnorm = cand, r_cand, n_cand
            stagnant = 0
        else:
            stagnant += 1
        run.record(out.indices, r)
        reason = reached()
        if not reason and stagnant >= config.stagnation_window:
            reason = "stagnation"
            run.trace.flags["stagnation"] = True
    run.trace.stop_reason = reason or "max_iterations"
    run.trace.final = w
    return w, run.trace


def solve(X: DesignMatrix, y, config: SolverConfig, selector="exact", *, rng=None,
          counter=None, on_iteration=None):
    """Dispatch on ``config.algorithm``; returns ``(SparseIterate, SolveTrace)``."""
    kw = dict(rng=rng, counter=counter, on_iteration=on_iteration)
    if config.algorithm == OMP:
        return gradient_pursuit(X, y, config.sparsity, selector, **kw)
    if config.algorithm == FW:
        return frank_wolfe(X, y, config, selector, **kw)
    return cosamp(X, y, config.sparsity, selector, config, **kw)
