"""Diagnostics for how well a realized sketch embeds a matrix.

Three views of the same question: are pairwise column distances
preserved (Johnson-Lindenstrauss), are the singular values of the
sketched orthonormal basis close to one (subspace embedding), and how
far do the sketched singular values drift in relative terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Array, RankDeficient, as_matrix, singular_values, svd
from .schemes import SketchOperator, apply_sketch

_GRID_FACTORS = (1, 2, 4, 6, 8, 16)


@dataclass(frozen=True)
class EmbeddingReport:
    pairwise_success_rate: float
    epsilon_hat: float
    singular_ratio_norm: float
    epsilon_target: float
    delta_target: float


def m_grid(d: int, epsilon: float, factors: tuple = _GRID_FACTORS) -> list:
    """Sketch-size grid: multiples of the base JL size log(d)/epsilon^2."""
    base = round(np.log(d) / epsilon**2)
    return [int(c * base) for c in factors]


def jl_pairwise_success(a: Array, op: SketchOperator, epsilon: float) -> float:
    """Fraction of distinct column pairs whose squared distance survives.

    A pair (i, j) counts as a success when ||Pi(a_i - a_j)||^2 lies
    strictly inside (1 +/- epsilon) times the true squared distance.
    Zero-distance pairs are excluded; all pairs zero is an error.
    """
    a = as_matrix(a)
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    d = a.shape[1]
    if d < 2:
        raise ValueError("need at least two columns to form pairs")
    ii, jj = np.triu_indices(d, k=1)
    diffs = a[:, ii] - a[:, jj]
    true_sq = np.sum(diffs**2, axis=0)
    live = true_sq > 0.0
    if not np.any(live):
        raise ValueError("all column pairs have zero distance")
    sk_sq = np.sum(apply_sketch(op, diffs[:, live]) ** 2, axis=0)
    return pairwise_success_from_squares(true_sq[live], sk_sq, epsilon)


def pairwise_success_from_squares(true_sq: Array, sk_sq: Array, epsilon: float) -> float:
    """Success fraction from precomputed squared distances, strict bounds."""
    t = np.asarray(true_sq, dtype=float)
    s = np.asarray(sk_sq, dtype=float)
    ok = ((1.0 - epsilon) * t < s) & (s < (1.0 + epsilon) * t)
    return float(np.mean(ok))


def _full_rank_svd(a: Array):
    factors = svd(a)
    s = factors.singular_values
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficient(
            "matrix is numerically rank deficient", singular_values=s
        )
    return factors


def singular_distortion(a: Array, op: SketchOperator) -> float:
    """Worst squared-singular-value deviation of the sketched basis.

    Equals the spectral norm of (Pi U)'(Pi U) - I, so the sketch is an
    eps_hat-subspace-embedding of the column space of a.
    """
    u = _full_rank_svd(a).u
    s = singular_values(apply_sketch(op, u))
    dev = np.abs(1.0 - s**2)
    rank_gap = u.shape[1] - len(s)
    if rank_gap > 0:
        dev = np.concatenate([dev, np.ones(rank_gap)])
    return float(np.max(dev))


def singular_ratio_norm(a: Array, op: SketchOperator) -> float:
    """Euclidean norm of the relative singular-value deviations."""
    s_true = _full_rank_svd(a).singular_values
    s_sk = singular_values(apply_sketch(op, a))
    return ratio_norm_from_singulars(s_true, s_sk)


def ratio_norm_from_singulars(s_true: Array, s_sk: Array) -> float:
    """||s_sk / s_true - 1||_2 with missing trailing values treated as zero."""
    s_true = np.asarray(s_true, dtype=float)
    s_sk = np.asarray(s_sk, dtype=float)
    if len(s_sk) < len(s_true):
        s_sk = np.concatenate([s_sk, np.zeros(len(s_true) - len(s_sk))])
    return float(np.linalg.norm(s_sk / s_true - 1.0))


def embedding_report(
    a: Array, op: SketchOperator, epsilon: float, delta: float
) -> EmbeddingReport:
    return EmbeddingReport(
        pairwise_success_rate=jl_pairwise_success(a, op, epsilon),
        epsilon_hat=singular_distortion(a, op),
        singular_ratio_norm=singular_ratio_norm(a, op),
        epsilon_target=epsilon,
        delta_target=delta,
    )


def metric_summary_csv(records) -> str:
    """Long-format summary rows: (scheme, m, metric, samples) per record."""
    lines = ["scheme,m,metric,mean,mc_stderr,n_reps"]
    for scheme, m, metric, samples in records:
        samples = np.asarray(samples, dtype=float)
        n = len(samples)
        stderr = samples.std(ddof=1) / np.sqrt(n) if n > 1 else 0.0
        lines.append(
            f"{scheme},{m},{metric},{samples.mean():.10g},{stderr:.10g},{n}"
        )
    return "\n".join(lines) + "\n"
