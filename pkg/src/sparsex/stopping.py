"""Termination rules for accumulation selectors and the bandit doubling trick."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

STABILITY = "stability"
ERROR_BOUND = "error_bound"
FULL = "full"

DEFAULT_ERRBOUND_FRACTION = 1e-3


@dataclass(frozen=True)
class StoppingRule:
    """How long an accumulation-based selector keeps adding rows.

    ``n_s`` is either given directly or as ``n_s_fraction`` of the sample
    count (resolved per call with :meth:`stability_window`). For the error
    bound, ``epsilon=None`` means ``1e-3`` times the initial total mass.
    """

    kind: str
    n_s: int | None = None
    n_s_fraction: float | None = None
    epsilon: float | None = None

    def __post_init__(self):
        if self.kind == STABILITY:
            if self.n_s is None and self.n_s_fraction is None:
                raise ValueError("stability rule needs n_s or n_s_fraction")
            if self.n_s is not None and self.n_s < 1:
                raise ValueError("stability rule needs n_s >= 1")
            if self.n_s_fraction is not None and not self.n_s_fraction > 0:
                raise ValueError("stability fraction must be positive")
        elif self.kind == ERROR_BOUND:
            if self.epsilon is not None and not self.epsilon >= 0:
                raise ValueError("error-bound epsilon must be nonnegative")
        elif self.kind != FULL:
            raise ValueError(f"unknown stopping kind {self.kind!r}")

    @classmethod
    def stability(cls, n_s: int) -> "StoppingRule":
        return cls(STABILITY, n_s=int(n_s))

    @classmethod
    def stability_fraction(cls, fraction: float) -> "StoppingRule":
        return cls(STABILITY, n_s_fraction=float(fraction))

    @classmethod
    def error_bound(cls, epsilon: float | None = None) -> "StoppingRule":
        return cls(ERROR_BOUND, epsilon=epsilon)

    @classmethod
    def full(cls) -> "StoppingRule":
        return cls(FULL)

    def stability_window(self, n: int) -> int:
        if self.n_s is not None:
            return self.n_s
        return max(1, int(round(self.n_s_fraction * n)))

    @property
    def ident(self) -> str:
        if self.kind == FULL:
            return "full"
        if self.kind == STABILITY:
            if self.n_s is not None:
                return f"stability:{self.n_s}"
            return f"stability-frac:{self.n_s_fraction * 100:g}"
        return "errbound" if self.epsilon is None else f"errbound:{self.epsilon:g}"


def parse_stopping(text: str) -> StoppingRule:
    """Parse ``stability:<N_s>``, ``stability-frac:<pct>``, ``errbound[:<eps>]`` or ``full``."""
    name, _, arg = text.strip().partition(":")
    if name == "full" and not arg:
        return StoppingRule.full()
    if name == "stability" and arg:
        return StoppingRule.stability(int(arg))
    if name == "stability-frac" and arg:
        return StoppingRule.stability_fraction(float(arg) / 100.0)
    if name == "errbound":
        return StoppingRule.error_bound(float(arg) if arg else None)
    raise ValueError(f"unrecognized stopping rule {text!r}")


class StabilityTracker:
    """Fires once the same extreme has been observed ``n_s`` steps in a row.

    Keys may be ints (single extreme) or tuples (a top-m set).
    """

    def __init__(self, n_s: int):
        if n_s < 1:
            raise ValueError("n_s must be >= 1")
        self.n_s = n_s
        self.current_extreme = None
        self.streak = 0

    def step(self, new_extreme) -> bool:
        if new_extreme != self.current_extreme:
            self.current_extreme = new_extreme
            self.streak = 0
        self.streak += 1
        return self.streak >= self.n_s

    def first_firing(self, extremes):
        """Feed a batch of extremes; offset of the first firing step or None."""
        for k, e in enumerate(extremes):
            if self.step(e):
                return k
        return None


def stability_step(tracker: StabilityTracker, new_extreme) -> bool:
    return tracker.step(new_extreme)


class ErrorBoundTracker:
    """Tracks ``sum_{i not used} ||x_i||_inf |r_i|``, an upper bound on
    ``||partial_gradient - full_gradient||_inf`` for without-replacement
    accumulation.
    """

    def __init__(self, masses, epsilon: float):
        self.masses = np.asarray(masses, dtype=np.float64)
        self.epsilon = float(epsilon)
        self.total = float(self.masses.sum())
        self.remaining_mass = self.total
        self.consumed = 0

    @classmethod
    def for_residual(cls, X, r, epsilon=None):
        masses = X.row_linf_norms * np.abs(r)
        if epsilon is None:
            epsilon = DEFAULT_ERRBOUND_FRACTION * float(masses.sum())
        return cls(masses, epsilon)

    @property
    def fired(self) -> bool:
        return self.remaining_mass <= self.epsilon

    def step(self, i) -> bool:
        self.consumed += 1
        if self.consumed >= self.masses.size:
            self.remaining_mass = 0.0
        else:
            self.remaining_mass = max(self.remaining_mass - self.masses[i], 0.0)
        return self.fired

    def first_firing(self, indices):
        """Consume ``indices`` in order; offset of the first firing step or None."""
        for k, i in enumerate(indices):
            if self.step(i):
                return k
        return None


def error_bound_step(tracker: ErrorBoundTracker, i) -> bool:
    return tracker.step(i)


def doubling_trick(run, T0: int, max_doublings: int = 10):
    """Run a budgeted selector at T0, 2*T0, ... until two successive budgets agree.

    ``run`` maps a budget to a ``SelectorOutcome``. Runs are independent;
    total work is the sum over runs. Returns the outcome of the agreeing
    (or last) run with the doubling history in ``meta``.
    """
    if T0 < 1:
        raise ValueError("initial budget must be positive")
    budgets, total_macs, total_pulls = [], 0, 0
    prev = None
    outcome = None
    agreed = False
    T = int(T0)
    for _ in range(max_doublings + 1):
        outcome = run(T)
        budgets.append(T)
        total_macs += outcome.macs
        total_pulls += outcome.meta.get("pulls", 0)
        if prev is not None and tuple(prev.indices) == tuple(outcome.indices):
            agreed = True
            break
        prev = outcome
        T *= 2
    meta = dict(outcome.meta)
    meta.update(
        doubling_budgets=budgets,
        doubling_runs=len(budgets),
        doubling_agreed=agreed,
        total_pulls=total_pulls,
    )
    if not agreed:
        meta["no_agreement"] = True
    return replace(outcome, macs=total_macs, meta=meta)


def log2_ceil(d: int) -> int:
    return max(1, math.ceil(math.log2(d))) if d > 1 else 1
