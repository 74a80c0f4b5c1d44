"""Synthetic sparse-recovery instances and support-recovery metrics."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .core import DesignMatrix, SparseIterate

SUPPORT_THRESHOLD = 1e-3


def trial_rng(master_seed: int, trial: int = 0) -> np.random.Generator:
    """PCG64 stream for one trial, split from ``master_seed`` via SeedSequence.

    The stream depends only on ``(master_seed, trial)``, so serial and
    parallel runs see the same numbers.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(master_seed), int(trial)])))


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    X: DesignMatrix
    y: np.ndarray
    w_star: SparseIterate
    n: int
    d: int
    k: int
    snr_db: float
    seed: int | None
    sigma_e: float

    @property
    def instance_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X.data).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]

    def metadata(self) -> dict:
        return {
            "n": self.n, "d": self.d, "k": self.k, "snr_db": self.snr_db,
            "seed": self.seed, "sigma_e": self.sigma_e,
            "support": self.w_star.support.tolist(),
            "coefficients": self.w_star.coefficients.tolist(),
        }


def generate_problem(n, d, k, snr_db=3.0, rng=None, seed=None) -> ProblemInstance:
    """Draw ``y = X w* + e`` with unit-norm Gaussian columns and a k-sparse ``w*``.

    Nonzeros are ``g + 0.1 * sign(g)`` with ``g ~ N(0, 1)`` (sign(0) = +1), so
    every magnitude is at least 0.1. Noise variance is
    ``||X w*||^2 / n * 10**(-snr_db / 10)``.
    """
    if not (n >= 1 and d >= 1):
        raise ValueError("n and d must be positive")
    if not 0 <= k <= d:
        raise ValueError("k must lie in [0, d]")
    if rng is None:
        rng = trial_rng(0 if seed is None else seed)
    support = np.sort(rng.choice(d, size=k, replace=False))
    g = rng.standard_normal(k)
    values = g + 0.1 * np.where(g >= 0, 1.0, -1.0)
    X = rng.standard_normal((n, d))
    X /= np.linalg.norm(X, axis=0)
    w_star = SparseIterate(support, values, d)
    signal = X[:, support] @ values
    sigma2 = float(signal @ signal) / n * 10.0 ** (-snr_db / 10.0)
    sigma = float(np.sqrt(sigma2))
    y = signal + sigma * rng.standard_normal(n)
    return ProblemInstance(DesignMatrix.from_array(X), y, w_star, n, d, k, float(snr_db),
                           seed, sigma)


def support_of(w, gamma=SUPPORT_THRESHOLD) -> set:
    if isinstance(w, SparseIterate):
        return {int(j) for j, v in zip(w.support, w.coefficients) if abs(v) > gamma}
    w = np.asarray(w)
    return {int(j) for j in np.flatnonzero(np.abs(w) > gamma)}


def f_measure(w_star, w_hat, gamma=SUPPORT_THRESHOLD) -> float:
    """``2 |S* & S| / (|S*| + |S|)`` over gamma-thresholded supports; 1.0 if both empty."""
    if isinstance(w_star, SparseIterate) and isinstance(w_hat, SparseIterate) \
            and w_star.d != w_hat.d:
        raise ValueError("vectors live in different dimensions")
    a, b = support_of(w_star, gamma), support_of(w_hat, gamma)
    if not a and not b:
        return 1.0
    return 2.0 * len(a & b) / (len(a) + len(b))
