"""Strategies for locating the extreme entry of ``X.T @ r``.

Every selector has the call shape ``f(X, r, mode, ..., rng=None, exclude=None)``
and returns a :class:`SelectorOutcome`. ``exclude`` masks coordinates that
must not be returned (used by OMP when an inexact selector proposes an atom
that is already active).

Work accounting (one unit = one multiply-accumulate on matrix data):

==========================  ==================================================
exact                       ``n*d``
greedy                      ``t*d`` + ``ceil(n*log2 n)`` sort + ``t*d`` stability
randomized                  ``t*d`` + ``t*d`` stability
successive halving          one unit per (survivor, row) pair actually read,
                            + sort charge for the default non-stochastic order
successive reject           one unit per pull
mini-batch                  ``b*d``
==========================  ==================================================
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .core import ContractError, DesignMatrix
from .stopping import (
    ERROR_BOUND,
    FULL,
    STABILITY,
    ErrorBoundTracker,
    StabilityTracker,
    StoppingRule,
    doubling_trick,
    log2_ceil,
)

MIN = "min"
MAX_ABS = "max_abs"
TOP_M_ABS = "top_m_abs"

UNIFORM = "uniform"
IMPORTANCE = "importance"

NONIID_STOCHASTIC = "noniid"
NONSTOCHASTIC = "nonstochastic"

_FLOOR_WEIGHT = 1e-15


class BudgetError(ContractError):
    """Pull budget too small for the requested bandit schedule."""


@dataclass(frozen=True)
class SelectorMode:
    kind: str
    m: int = 1

    def __post_init__(self):
        if self.kind not in (MIN, MAX_ABS, TOP_M_ABS):
            raise ValueError(f"unknown selector mode {self.kind!r}")
        if self.m < 1:
            raise ValueError("m must be positive")
        if self.kind != TOP_M_ABS and self.m != 1:
            raise ValueError("MIN and MAX_ABS select a single coordinate")

    @classmethod
    def min(cls):
        return cls(MIN)

    @classmethod
    def max_abs(cls):
        return cls(MAX_ABS)

    @classmethod
    def top_m(cls, m):
        return cls(TOP_M_ABS, int(m))


@dataclass(frozen=True)
class SelectorOutcome:
    """Selected coordinate(s) plus the estimate's value at each of them.

    ``scores`` are positive multiples of the gradient estimate, so their
    signs are usable (Frank-Wolfe needs the sign of the chosen entry).
    """

    indices: tuple
    mode: SelectorMode
    macs: int
    scores: tuple = ()
    meta: dict = field(default_factory=dict)

    @property
    def index(self) -> int:
        return self.indices[0]

    @property
    def zero_gradient(self) -> bool:
        return bool(self.meta.get("zero_gradient", False))


@dataclass(frozen=True)
class GradientEstimate:
    """Partial accumulation ``sum_k w_k x_{i_k}`` over the consumed rows.

    ``rows`` and ``weights`` are the replay log: ``vector`` equals
    ``X[rows].T @ weights`` up to rounding.
    """

    vector: np.ndarray
    rows: np.ndarray
    weights: np.ndarray
    macs: int

    @property
    def t(self) -> int:
        return int(self.rows.size)

    @property
    def used_indices(self) -> frozenset:
        return frozenset(self.rows.tolist())


@dataclass(frozen=True)
class SamplingDistribution:
    probabilities: np.ndarray
    kind: str = UNIFORM
    zero_residual: bool = False

    def __post_init__(self):
        p = self.probabilities
        if p.ndim != 1 or p.size == 0:
            raise ContractError("sampling distribution must be a nonempty vector")
        if not np.all(p > 0):
            raise ContractError("sampling probabilities must be strictly positive")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ContractError("sampling probabilities must sum to one")


def build_sampling_distribution(r, row_l2_norms, kind=IMPORTANCE) -> SamplingDistribution:
    """Uniform, or importance weights ``p_i ~ |r_i| * ||x_i||_2``.

    Zero weights are floored at 1e-15 so the result stays in the simplex
    interior. An all-zero residual falls back to uniform and sets
    ``zero_residual``.
    """
    r = np.asarray(r, dtype=np.float64)
    n = r.size
    uniform = np.full(n, 1.0 / n)
    if kind == UNIFORM:
        return SamplingDistribution(uniform, UNIFORM)
    if kind != IMPORTANCE:
        raise ValueError(f"unknown sampling kind {kind!r}")
    w = np.abs(r) * np.asarray(row_l2_norms, dtype=np.float64)
    if not np.any(w > 0):
        return SamplingDistribution(uniform, UNIFORM, zero_residual=True)
    p = np.maximum(w, _FLOOR_WEIGHT)
    p /= p.sum()
    return SamplingDistribution(p, IMPORTANCE)


# --------------------------------------------------------------------- extremes

def _exclude_mask(d, exclude):
    if exclude is None:
        return None
    if isinstance(exclude, np.ndarray) and exclude.dtype == bool:
        return exclude if exclude.any() else None
    mask = np.zeros(d, dtype=bool)
    idx = np.asarray(list(exclude) if isinstance(exclude, (set, frozenset)) else exclude,
                     dtype=np.intp)
    mask[idx] = True
    return mask if mask.any() else None


def _keys(values, kind, mask):
    """Ranking keys along the last axis; smaller is better, excluded -> +inf."""
    keys = values.copy() if kind == MIN else -np.abs(values)
    if mask is not None:
        keys[..., mask] = np.inf
    return keys


def pick_extremes(values, mode: SelectorMode, exclude=None) -> tuple:
    """Coordinates of ``values`` selected by ``mode``; ties go to the smallest index."""
    values = np.asarray(values, dtype=np.float64)
    mask = _exclude_mask(values.size, exclude)
    keys = _keys(values, mode.kind, mask)
    available = values.size - (0 if mask is None else int(mask.sum()))
    if mode.kind == TOP_M_ABS:
        if mode.m > available:
            raise ContractError("fewer selectable coordinates than m")
        return tuple(int(j) for j in np.argsort(keys, kind="stable")[: mode.m])
    if available < 1:
        raise ContractError("every coordinate is excluded")
    return (int(np.argmin(keys)),)


def _row_extremes(P, mode, mask):
    """Extreme of each row of a block of partial sums, as hashable keys."""
    keys = _keys(P, mode.kind, mask)
    if mode.kind == TOP_M_ABS:
        top = np.sort(np.argsort(keys, axis=1, kind="stable")[:, : mode.m], axis=1)
        return [tuple(row) for row in top.tolist()]
    return np.argmin(keys, axis=1).tolist()


def _outcome(g, mode, macs, mask, meta):
    idx = pick_extremes(g, mode, mask)
    return SelectorOutcome(idx, mode, int(macs), tuple(float(g[j]) for j in idx), meta)


def _zero_outcome(d, mode, mask):
    g = np.zeros(d)
    return _outcome(g, mode, 0, mask, {"zero_gradient": True, "stop_reason": "zero_gradient"})


def _sort_charge(n):
    return int(math.ceil(n * math.log2(n))) if n > 1 else 0


# ----------------------------------------------------------------- accumulation

def accumulate(X: DesignMatrix, rows, weights, mode, stop: StoppingRule, mask=None,
               masses=None, start_block=32, max_block=512):
    """Accumulate ``weights[k] * X[rows[k]]`` in order until ``stop`` fires.

    Returns ``(GradientEstimate, stability_overhead, stop_reason)``. Partial
    sums are formed block-wise with a running cumsum, which reproduces the
    step-by-step sums exactly; the extreme is evaluated after every step
    when the rule needs it.
    """
    n, d = X.shape
    rows = np.asarray(rows, dtype=np.intp)
    weights = np.asarray(weights, dtype=np.float64)
    T = rows.size
    overhead = 0

    if stop.kind == FULL:
        t = T
        g = X.data[rows].T @ weights
        reason = "full"
    elif stop.kind == ERROR_BOUND:
        if masses is None:
            raise ContractError("error-bound stopping needs per-row masses")
        tracker = ErrorBoundTracker(masses, stop.epsilon if stop.epsilon is not None
                                    else 1e-3 * float(np.sum(masses)))
        if tracker.fired:
            t = 0
        else:
            k = tracker.first_firing(rows)
            t = T if k is None else k + 1
        g = X.data[rows[:t]].T @ weights[:t] if t else np.zeros(d)
        reason = "error_bound" if tracker.fired else "exhausted"
    elif stop.kind == STABILITY:
        tracker = StabilityTracker(stop.stability_window(n))
        g = np.zeros(d)
        pos, block, t = 0, start_block, None
        while pos < T:
            sl = slice(pos, min(pos + block, T))
            C = X.data[rows[sl]] * weights[sl, None]
            C[0] += g
            P = np.cumsum(C, axis=0, out=C)
            k = tracker.first_firing(_row_extremes(P, mode, mask))
            if k is not None:
                g = P[k].copy()
                t = pos + k + 1
                break
            g = P[-1].copy()
            pos = sl.stop
            block = min(2 * block, max_block)
        reason = "stability"
        if t is None:
            t, reason = T, "exhausted"
        overhead = t * d
    else:
        raise ValueError(f"unsupported stopping kind {stop.kind!r}")

    est = GradientEstimate(g, rows[:t].copy(), weights[:t].copy(), t * d)
    return est, overhead, reason


# -------------------------------------------------------------------- selectors

def exact_selector(X: DesignMatrix, r, mode: SelectorMode, *, rng=None, exclude=None):
    """Full ``X.T @ r`` then argmin / argmax-abs / top-m-abs."""
    r = np.asarray(r, dtype=np.float64)
    mask = _exclude_mask(X.d, exclude)
    if not np.any(r):
        return _zero_outcome(X.d, mode, mask)
    g = X.data.T @ r
    return _outcome(g, mode, X.n * X.d, mask, {"t": X.n, "stop_reason": "exact"})


def greedy_deterministic_selector(X: DesignMatrix, r, mode: SelectorMode,
                                  stop: StoppingRule | None = None, *, rng=None,
                                  exclude=None, keep_estimate=False):
    """Accumulate rows by decreasing ``|r_i| * ||x_i||_2`` until ``stop`` fires."""
    stop = stop or StoppingRule.full()
    r = np.asarray(r, dtype=np.float64)
    n, d = X.shape
    mask = _exclude_mask(d, exclude)
    if not np.any(r):
        return _zero_outcome(d, mode, mask)
    order = np.argsort(-(np.abs(r) * X.row_l2_norms), kind="stable")
    sort_cost = _sort_charge(n)
    if stop.kind == FULL:
        # every row is consumed; the sum is order-invariant
        g = X.data.T @ r
        est = GradientEstimate(g, order, r[order], n * d)
        overhead, reason = 0, "full"
    else:
        masses = X.row_linf_norms * np.abs(r)
        est, overhead, reason = accumulate(X, order, r[order], mode, stop, mask, masses)
    meta = {"t": est.t, "stop_reason": reason, "sort_macs": sort_cost,
            "stability_macs": overhead, "order": order}
    if keep_estimate:
        meta["estimate"] = est
    return _outcome(est.vector, mode, est.macs + sort_cost + overhead, mask, meta)


def randomized_selector(X: DesignMatrix, r, mode: SelectorMode, dist=IMPORTANCE,
                        stop: StoppingRule | None = None, *, rng=None, max_draws=None,
                        exclude=None, average=False, keep_estimate=False):
    """Importance-weighted sampling with replacement: add ``x_i r_i / p_i`` per draw.

    ``dist`` is a :class:`SamplingDistribution` or one of ``"uniform"``,
    ``"importance"``. The running sum is not divided by ``t`` unless
    ``average`` is set; extremes are invariant to that scaling. At most
    ``max_draws`` (default ``n``) draws are made.
    """
    if rng is None:
        raise ContractError("randomized selector needs an rng")
    stop = stop or StoppingRule.full()
    if stop.kind == ERROR_BOUND:
        raise ContractError("the error bound only holds for accumulation without replacement")
    r = np.asarray(r, dtype=np.float64)
    n, d = X.shape
    mask = _exclude_mask(d, exclude)
    if not np.any(r):
        return _zero_outcome(d, mode, mask)
    if not isinstance(dist, SamplingDistribution):
        dist = build_sampling_distribution(r, X.row_l2_norms, dist)
    p = dist.probabilities
    T = int(max_draws) if max_draws is not None else n
    rows = rng.choice(n, size=T, p=p)
    weights = r[rows] / p[rows]
    if stop.kind == FULL:
        est = GradientEstimate(X.data[rows].T @ weights, rows, weights, T * d)
        overhead, reason = 0, "full"
    else:
        est, overhead, reason = accumulate(X, rows, weights, mode, stop, mask)
    g = est.vector / est.t if average and est.t else est.vector
    meta = {"t": est.t, "stop_reason": reason, "stability_macs": overhead,
            "distribution": dist.kind, "rows": est.rows}
    if keep_estimate:
        meta["estimate"] = est
    return _outcome(g, mode, est.macs + overhead, mask, meta)


def _rank(S, scores, kind):
    """Survivors ordered best-first; ties resolved toward the smaller index."""
    key = scores[S] if kind == MIN else -np.abs(scores[S])
    return S[np.lexsort((S, key))]


def _halving(X, r, mode, budget, loss_kind, rng, permutation, log_divisor, mask, m_final):
    n, d = X.shape
    r = np.asarray(r, dtype=np.float64)
    budget = int(budget)
    if d < 2:
        raise ContractError("successive halving needs at least two arms")
    if budget < d:
        raise BudgetError(f"budget {budget} is below the number of arms {d}")
    if loss_kind not in (NONIID_STOCHASTIC, NONSTOCHASTIC):
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    S = np.arange(d) if mask is None else np.flatnonzero(~mask)
    if m_final is not None and m_final > S.size:
        raise ContractError("fewer selectable arms than m")
    rank_kind = MIN if mode.kind == MIN else MAX_ABS

    L = log2_ceil(d)
    divisor = int(log_divisor) if log_divisor is not None else L
    scores = np.zeros(d)
    macs = 0
    if loss_kind == NONSTOCHASTIC:
        if permutation is None or permutation == "sorted":
            tau = np.argsort(-(np.abs(r) * X.row_l2_norms), kind="stable")
            macs += _sort_charge(n)
        elif permutation == "random":
            if rng is None:
                raise ContractError("a random permutation needs an rng")
            tau = rng.permutation(n)
        else:
            tau = np.asarray(permutation, dtype=np.intp)
    elif rng is None:
        raise ContractError("non-iid halving needs an rng")

    R = 0
    pulls = 0
    floor_guard = False
    draws, rounds = [], []
    for ell in range(L):
        r_ell = budget // (S.size * divisor)
        if r_ell == 0:
            r_ell, floor_guard = 1, True
        if loss_kind == NONSTOCHASTIC:
            rows = tau[R:min(R + r_ell, n)]
            if rows.size == n:
                cols = X.data if S.size == d else X.data[:, S]
                scores[S] += cols.T @ r
            elif rows.size:
                scores[S] += X.data[np.ix_(rows, S)].T @ r[rows]
        else:
            rows = rng.integers(0, n, size=r_ell)
            draws.append(rows)
            scores[S] += X.data[np.ix_(rows, S)].T @ (r[rows] * n)
        macs += rows.size * S.size
        pulls += r_ell * S.size
        R += r_ell
        rounds.append({"survivors": int(S.size), "pulls_per_arm": int(r_ell),
                       "rows_read": int(rows.size)})
        S = _rank(S, scores, rank_kind)
        if m_final is not None and S.size // 2 < m_final:
            S = S[:m_final]
            break
        S = S[: max(1, S.size // 2)]
        if S.size == 1:
            break

    meta = {"pulls": int(pulls), "budget": budget, "rounds": rounds,
            "overshoot": max(0, int(pulls) - budget), "floor_guard": floor_guard,
            "cumulative_pulls": int(R), "loss_kind": loss_kind,
            "stop_reason": "budget"}
    if loss_kind == NONIID_STOCHASTIC:
        meta["draws"] = draws
    if m_final is not None:
        S = S[:m_final]
        idx = tuple(int(j) for j in S)
    else:
        idx = (int(S[0]),)
    return SelectorOutcome(idx, mode, int(macs), tuple(float(scores[j]) for j in idx), meta)


def successive_halving_selector(X: DesignMatrix, r, mode: SelectorMode, budget,
                                loss_kind=NONSTOCHASTIC, *, rng=None, permutation=None,
                                log_divisor=None, exclude=None):
    """Successive halving over the d gradient coordinates (arms).

    A pull of a round advances every surviving arm by the same row: a uniform
    draw weighted by ``n`` (non-iid) or the next row of ``tau`` (non-stochastic,
    default ``tau`` = decreasing ``|r_i| * ||x_i||_2``; scores freeze once all
    n rows are read). Round ``l`` pulls ``floor(T / (|S_l| * ceil(log2 d)))``
    times, at least once. MIN ranks by score, MAX_ABS by ``|score|``.
    """
    if mode.kind == TOP_M_ABS:
        return successive_halving_top_m(X, r, mode.m, budget, loss_kind, rng=rng,
                                        permutation=permutation, log_divisor=log_divisor,
                                        exclude=exclude)
    mask = _exclude_mask(X.d, exclude)
    if not np.any(r):
        return _zero_outcome(X.d, mode, mask)
    return _halving(X, r, mode, budget, loss_kind, rng, permutation, log_divisor, mask, None)


def successive_halving_top_m(X: DesignMatrix, r, m, budget, loss_kind=NONSTOCHASTIC, *,
                             rng=None, permutation=None, log_divisor=None, exclude=None):
    """Same schedule as :func:`successive_halving_selector`; halving stops before
    the survivor set would drop below ``m`` and the best ``m`` by ``|score|`` are returned.
    """
    mode = SelectorMode.top_m(m)
    mask = _exclude_mask(X.d, exclude)
    if m > X.d:
        raise ContractError("m exceeds the number of arms")
    if not np.any(r):
        return _zero_outcome(X.d, mode, mask)
    return _halving(X, r, mode, budget, loss_kind, rng, permutation, log_divisor, mask, m)


def reject_phase_lengths(d, budget):
    """Cumulative per-arm pull counts ``n_1..n_{d-1}`` of successive reject."""
    logbar = Fraction(1, 2) + sum(Fraction(1, i) for i in range(2, d + 1))
    return [math.ceil(Fraction(budget - d) / (logbar * (d + 1 - k))) for k in range(1, d)]


def successive_reject_selector(X: DesignMatrix, r, mode: SelectorMode, budget, *,
                               rng=None, exclude=None):
    """Successive reject: d-1 phases, each arm draws its own uniform rows."""
    if mode.kind == TOP_M_ABS:
        raise ContractError("successive reject selects a single arm")
    if rng is None:
        raise ContractError("successive reject needs an rng")
    n, d = X.shape
    r = np.asarray(r, dtype=np.float64)
    budget = int(budget)
    mask = _exclude_mask(d, exclude)
    if budget < d:
        raise BudgetError(f"budget {budget} is below the number of arms {d}")
    if not np.any(r):
        return _zero_outcome(d, mode, mask)
    S = np.arange(d) if mask is None else np.flatnonzero(~mask)
    K = S.size
    sums = np.zeros(d)
    pulls, prev = 0, 0
    lengths = reject_phase_lengths(K, budget) if K > 1 else []
    for n_k in lengths:
        cnt = n_k - prev
        if cnt > 0:
            rows = rng.integers(0, n, size=(cnt, S.size))
            sums[S] += (X.data[rows, S[None, :]] * (r[rows] * n)).sum(axis=0)
            pulls += cnt * S.size
        prev = n_k
        # worst arm last; ties keep the smaller index
        S = np.sort(_rank(S, sums, MIN if mode.kind == MIN else MAX_ABS)[:-1])
    j = int(S[0])
    meta = {"pulls": int(pulls), "budget": budget, "phase_lengths": lengths,
            "stop_reason": "budget"}
    return SelectorOutcome((j,), mode, int(pulls), (float(sums[j]),), meta)


def stochastic_minibatch_selector(X: DesignMatrix, r, mode: SelectorMode, batch_size, *,
                                  rng=None, exclude=None):
    """Gradient over ``b`` rows drawn uniformly without replacement."""
    n, d = X.shape
    b = int(batch_size)
    if not 1 <= b <= n:
        raise ContractError(f"batch size must lie in [1, {n}]")
    if rng is None:
        raise ContractError("mini-batch selector needs an rng")
    r = np.asarray(r, dtype=np.float64)
    mask = _exclude_mask(d, exclude)
    if not np.any(r):
        return _zero_outcome(d, mode, mask)
    rows = np.sort(rng.choice(n, size=b, replace=False))
    g = X.data.T @ r if b == n else X.data[rows].T @ r[rows]
    return _outcome(g, mode, b * d, mask, {"t": b, "rows": rows, "stop_reason": "batch"})


# --------------------------------------------------------------------- registry

BANDITS = ("halving-noniid", "halving-nonstoch", "reject")
SELECTOR_IDS = ("exact", "greedy", "uniform", "importance") + BANDITS + ("stoch:<b>",)


@dataclass(frozen=True)
class Selector:
    """A configured selector callable as ``sel(X, r, mode, rng=..., exclude=...)``.

    Bandit budgets are ``budget_ratio * n * d`` pulls (at least ``d``). With
    ``doubling`` the budget is the starting point of the doubling trick.
    """

    name: str
    stopping: StoppingRule | None = None
    budget_ratio: float = 0.2
    batch_size: int | None = None
    batch_fraction: float | None = None
    doubling: bool = False
    max_doublings: int = 8
    options: dict = field(default_factory=dict)

    @property
    def is_bandit(self) -> bool:
        return self.name in BANDITS

    @property
    def ident(self) -> str:
        if self.name == "stoch":
            if self.batch_size is not None:
                return f"stoch:{self.batch_size}"
            return f"stoch:{self.batch_fraction * 100:g}%"
        return self.name

    def budget(self, n, d) -> int:
        return max(d, int(round(self.budget_ratio * n * d)))

    def __call__(self, X: DesignMatrix, r, mode: SelectorMode, rng=None, exclude=None):
        n, d = X.shape
        name = self.name
        if name == "exact":
            return exact_selector(X, r, mode, exclude=exclude)
        if name == "greedy":
            return greedy_deterministic_selector(X, r, mode, self.stopping, exclude=exclude)
        if name in (UNIFORM, IMPORTANCE):
            return randomized_selector(X, r, mode, name, self.stopping, rng=rng,
                                       exclude=exclude, **self.options)
        if name == "stoch":
            b = self.batch_size if self.batch_size is not None \
                else max(1, int(round(self.batch_fraction * n)))
            return stochastic_minibatch_selector(X, r, mode, min(b, n), rng=rng,
                                                 exclude=exclude)
        if name in BANDITS:
            def run(T):
                if name == "reject":
                    return successive_reject_selector(X, r, mode, T, rng=rng, exclude=exclude)
                kind = NONIID_STOCHASTIC if name == "halving-noniid" else NONSTOCHASTIC
                return successive_halving_selector(X, r, mode, T, kind, rng=rng,
                                                   exclude=exclude, **self.options)
            T = self.budget(n, d)
            if self.doubling:
                return doubling_trick(run, T, self.max_doublings)
            return run(T)
        raise ValueError(f"unknown selector {name!r}")


def make_selector(ident: str, stopping: StoppingRule | None = None, budget_ratio=0.2,
                  doubling=False, **options) -> Selector:
    """Build a selector from its CLI identifier.

    ``stoch:<b>`` takes an absolute batch size, or a percentage of n when
    written ``stoch:<pct>%``.
    """
    ident = ident.strip()
    if ident.startswith("stoch:"):
        arg = ident.split(":", 1)[1]
        if arg.endswith("%"):
            return Selector("stoch", batch_fraction=float(arg[:-1]) / 100.0)
        return Selector("stoch", batch_size=int(arg))
    if ident in ("exact", "greedy", UNIFORM, IMPORTANCE) + BANDITS:
        if ident in ("greedy", UNIFORM, IMPORTANCE) and stopping is None:
            stopping = StoppingRule.stability_fraction(0.02)
        return Selector(ident, stopping=stopping, budget_ratio=float(budget_ratio),
                        doubling=doubling, options=options)
    raise ValueError(f"unknown selector {ident!r}; expected one of {', '.join(SELECTOR_IDS)}")
