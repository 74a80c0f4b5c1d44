"""Sparsity-constrained least squares with inexact extreme-gradient selectors."""
from __future__ import annotations

from .core import (
    ContractError,
    DesignMatrix,
    SolveInfo,
    SparseIterate,
    WorkCounter,
    compute_residual,
    full_gradient,
    objective,
    restricted_least_squares,
)
from .selectors import (
    BudgetError,
    SamplingDistribution,
    Selector,
    SelectorMode,
    SelectorOutcome,
    build_sampling_distribution,
    exact_selector,
    greedy_deterministic_selector,
    make_selector,
    randomized_selector,
    stochastic_minibatch_selector,
    successive_halving_selector,
    successive_halving_top_m,
    successive_reject_selector,
)
from .solvers import SolverConfig, SolveTrace, cosamp, frank_wolfe, gradient_pursuit, lmo, solve
from .stopping import (
    ErrorBoundTracker,
    StabilityTracker,
    StoppingRule,
    doubling_trick,
    parse_stopping,
)
from .synth import ProblemInstance, f_measure, generate_problem, support_of, trial_rng

__version__ = "0.1.0"
