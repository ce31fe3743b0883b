"""Monte Carlo approximate matrix multiplication by row sampling.

A'B is estimated by sampling m row indices with replacement from a
probability vector p and averaging the Horvitz-Thompson-weighted outer
products. Probabilities proportional to the row-norm products minimize
the expected squared Frobenius error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Array, as_matrix
from .rounding import snap_ceil

_SUM_TOL = 1e-12


class DegenerateInput(ValueError):
    """Every row-norm product is zero; no informative distribution exists."""


class ZeroProbabilityRow(ValueError):
    """A row with zero probability has mass in both factors."""


@dataclass(frozen=True)
class SamplingDistribution:
    probabilities: Array

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1:
            raise ValueError("probabilities must be a vector")
        if np.any(p < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(p.sum() - 1.0) > _SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", p)


def optimal_probabilities(a: Array, b: Array) -> SamplingDistribution:
    """Variance-minimizing sampling weights, p_k proportional to |A_k||B_k|."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[0] != b.shape[0]:
        raise ValueError("factors must have the same number of rows")
    products = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    total = products.sum()
    if total == 0.0:
        raise DegenerateInput("all row-norm products are zero")
    return SamplingDistribution(products / total)


def _build_alias(p: Array) -> tuple[Array, Array, Array]:
    """Alias tables over the support of p (zero-probability rows excluded)."""
    support = np.flatnonzero(p > 0)
    scaled = p[support] * len(support)
    prob = np.ones(len(support))
    alias = np.arange(len(support))
    small = [i for i, v in enumerate(scaled) if v < 1.0]
    large = [i for i, v in enumerate(scaled) if v >= 1.0]
    scaled = scaled.copy()
    while small and large:
        s = small.pop()
        l = large.pop()
        prob[s] = scaled[s]
        alias[s] = l
        scaled[l] = scaled[l] - (1.0 - scaled[s])
        if scaled[l] < 1.0:
            small.append(l)
        else:
            large.append(l)
    return support, prob, alias


def _alias_draw(
    support: Array, prob: Array, alias: Array, m: int, rng: np.random.Generator
) -> Array:
    k = len(support)
    slots = rng.integers(0, k, size=m)
    keep = rng.random(m) < prob[slots]
    return support[np.where(keep, slots, alias[slots])]


def amm(
    a: Array,
    b: Array,
    m: int,
    p: SamplingDistribution,
    seed: int,
    draws: Array | None = None,
) -> Array:
    """Sampled estimate of A'B; `draws` overrides sampling for tests."""
    a = as_matrix(a)
    b = as_matrix(b)
    n = a.shape[0]
    if b.shape[0] != n or len(p.probabilities) != n:
        raise ValueError("A, B, and p must agree on the number of rows")
    if m < 1:
        raise ValueError("m must be at least 1")
    probs = p.probabilities
    massive = (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)) > 0
    if np.any(massive & (probs == 0.0)):
        raise ZeroProbabilityRow(
            "zero-probability rows must have a zero row in A or B"
        )
    if draws is None:
        rng = np.random.default_rng(int(seed) % (1 << 64))
        support, prob, alias = _build_alias(probs)
        draws = _alias_draw(support, prob, alias, m, rng)
    else:
        draws = np.asarray(draws, dtype=np.int64)
        if len(draws) != m:
            raise ValueError("draws must contain exactly m indices")
    weights = 1.0 / (m * probs[draws])
    return a[draws].T @ (b[draws] * weights[:, None])


def amm_variance_bound(a: Array, b: Array, m: int) -> float:
    """Worst-case expected squared error under optimal p."""
    if m < 1:
        raise ValueError("m must be at least 1")
    a = as_matrix(a)
    b = as_matrix(b)
    return float(np.sum(a**2) * np.sum(b**2) / m)


def amm_exact_variance(a: Array, b: Array, p: SamplingDistribution, m: int) -> float:
    """E ||C_tilde - A'B||_F^2 for the given sampling distribution."""
    a = as_matrix(a)
    b = as_matrix(b)
    w2 = np.sum(a**2, axis=1) * np.sum(b**2, axis=1)
    probs = p.probabilities
    live = probs > 0
    if np.any(w2[~live] > 0):
        raise ZeroProbabilityRow(
            "zero-probability rows must have a zero row in A or B"
        )
    second_moment = float(np.sum(w2[live] / probs[live]))
    return (second_moment - float(np.sum((a.T @ b) ** 2))) / m


def amm_required_m(epsilon: float, delta: float) -> int:
    """Rows needed for relative error epsilon with probability 1 - delta."""
    if not (0.0 < epsilon < 1.0 and 0.0 < delta < 1.0):
        raise ValueError("epsilon and delta must lie in (0, 1)")
    return max(1, snap_ceil(1.0 / (delta * epsilon**2)))
