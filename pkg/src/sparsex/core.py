"""Dense linear-algebra substrate shared by selectors and solvers.

Residual convention: ``r = Xw - y`` so that ``X.T @ r`` is the gradient of
``0.5 * ||y - Xw||^2``. Every selector searches the extremes of ``X.T @ r``.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np


class ContractError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


class WorkCounter:
    """Multiply-accumulate counter for one solver run.

    One unit is one scalar multiply-accumulate on matrix data. Charges are
    kept per category so the total can be audited against its parts.
    """

    def __init__(self):
        self.total = 0
        self.by_category = defaultdict(int)

    def charge(self, units, category="other"):
        units = int(units)
        if units < 0:
            raise ContractError("work charges must be nonnegative")
        self.total += units
        self.by_category[category] += units
        return units

    def __repr__(self):
        return f"WorkCounter(total={self.total}, {dict(self.by_category)})"


def _charge(counter, units, category):
    if counter is not None:
        counter.charge(units, category)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Row-contiguous n x d sample matrix with cached row norms."""

    data: np.ndarray
    row_l2_norms: np.ndarray = field(repr=False)
    row_linf_norms: np.ndarray = field(repr=False)

    @classmethod
    def from_array(cls, a) -> "DesignMatrix":
        a = np.array(a, dtype=np.float64, order="C", copy=True)
        if a.ndim != 2:
            raise ContractError(f"design matrix must be 2-D, got shape {a.shape}")
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ContractError("design matrix needs n >= 1 and d >= 1")
        if not np.all(np.isfinite(a)):
            raise ContractError("design matrix has non-finite entries")
        a.setflags(write=False)
        l2 = np.linalg.norm(a, axis=1)
        linf = np.abs(a).max(axis=1)
        l2.setflags(write=False)
        linf.setflags(write=False)
        return cls(a, l2, linf)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def row(self, i):
        return self.data[i]

    def columns(self, idx):
        """Dense n x len(idx) copy of the requested columns."""
        return self.data[:, np.asarray(idx, dtype=np.intp)]


@dataclass(frozen=True)
class SparseIterate:
    """Sparse vector in R^d stored as (sorted support, coefficients).

    Explicit zeros are pruned on construction.
    """

    support: np.ndarray
    coefficients: np.ndarray
    d: int

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.intp).ravel()
        coef = np.asarray(self.coefficients, dtype=np.float64).ravel()
        if support.shape != coef.shape:
            raise ContractError("support and coefficients differ in length")
        if support.size and (support.min() < 0 or support.max() >= self.d):
            raise ContractError("support index out of range")
        order = np.argsort(support, kind="stable")
        support, coef = support[order], coef[order]
        if support.size > 1 and np.any(np.diff(support) == 0):
            raise ContractError("duplicate support index")
        keep = coef != 0.0
        object.__setattr__(self, "support", support[keep])
        object.__setattr__(self, "coefficients", coef[keep])

    @classmethod
    def zeros(cls, d) -> "SparseIterate":
        return cls(np.empty(0, dtype=np.intp), np.empty(0), d)

    @classmethod
    def from_dense(cls, w) -> "SparseIterate":
        w = np.asarray(w, dtype=np.float64).ravel()
        nz = np.flatnonzero(w)
        return cls(nz, w[nz], w.size)

    def to_dense(self) -> np.ndarray:
        w = np.zeros(self.d)
        w[self.support] = self.coefficients
        return w

    @property
    def nnz(self) -> int:
        return int(self.support.size)


@dataclass(frozen=True)
class SolveInfo:
    """Diagnostics attached to a restricted least-squares solve."""

    rank_deficient: bool = False
    ridge: float = 0.0


def _check_vector(v, length, name):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != length:
        raise ContractError(f"{name} must have length {length}, got shape {v.shape}")
    return v


def compute_residual(X: DesignMatrix, y, w: SparseIterate, counter=None) -> np.ndarray:
    """Residual ``X_G w_G - y`` using only the support columns of ``w``."""
    y = _check_vector(y, X.n, "y")
    if w.d != X.d:
        raise ContractError(f"iterate dimension {w.d} != matrix dimension {X.d}")
    if w.nnz == 0:
        return -y
    _charge(counter, X.n * w.nnz, "residual")
    return X.columns(w.support) @ w.coefficients - y


def full_gradient(X: DesignMatrix, r, counter=None) -> np.ndarray:
    """Exact gradient ``sum_i r_i x_i``; charged n*d."""
    r = _check_vector(r, X.n, "r")
    _charge(counter, X.n * X.d, "gradient")
    return X.data.T @ r


def restricted_least_squares(X: DesignMatrix, y, support, counter=None):
    """Minimize ``0.5 * ||y - X_S w_S||^2`` over coordinates in ``support``.

    Returns ``(SparseIterate, SolveInfo)``. A rank-deficient column block is
    solved through ridge-regularized normal equations (ridge
    ``1e-10 * trace(G) / |S|``) instead of failing; ``SolveInfo`` flags it.
    Charged ``n * |S|**2`` for the factorization plus ``n * |S|`` for the
    right-hand side.
    """
    y = _check_vector(y, X.n, "y")
    support = np.unique(np.asarray(support, dtype=np.intp))
    if support.size == 0:
        raise ContractError("restricted least squares needs a nonempty support")
    if support[0] < 0 or support[-1] >= X.d:
        raise ContractError("support index out of range")
    m = support.size
    _charge(counter, X.n * m * m + X.n * m, "solve")

    A = X.columns(support)
    info = SolveInfo()
    coef, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < m:
        G = A.T @ A
        ridge = 1e-10 * np.trace(G) / m
        if ridge == 0.0:
            ridge = 1e-10
        coef = np.linalg.solve(G + ridge * np.eye(m), A.T @ y)
        info = SolveInfo(rank_deficient=True, ridge=float(ridge))
    return SparseIterate(support, coef, X.d), info


def objective(X: DesignMatrix, y, w: SparseIterate) -> float:
    """Least-squares objective ``0.5 * ||Xw - y||^2`` (not charged)."""
    r = compute_residual(X, y, w)
    return 0.5 * float(r @ r)
