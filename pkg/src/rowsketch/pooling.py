"""Divide-and-pool estimation across disjoint uniform sketches.

Draw J non-overlapping row blocks of size m, fit sketched least squares
on each, and combine the fits two ways: average the coefficient vectors
(``beta_bar``, tested with normal critical values) or average per-sketch
t statistics (tested against t with J-1 degrees of freedom). Blocks come
from one global permutation, so disjointness holds by construction.
"""

from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from rowsketch.linalg import Array, as_matrix, as_vector
from rowsketch.regression import (
    ContrastVector,
    RegressionFit,
    SingularSketch,
    VarianceMode,
    fit_sketched_rows,
)


class PartitionImpossible(ValueError):
    """Requested m*J rows exceed the source row count."""


class AllSketchesSingular(RuntimeError):
    """Too few sketches survived rank checks to aggregate."""


class DegenerateSpread(RuntimeError):
    """Per-sketch t statistics have zero sample spread."""


# Stream namespace for the partition permutation; scheme builds use 1-9.
_POOL_STREAM = 10


@dataclass(frozen=True)
class PooledFit:
    """Per-sketch fits plus their pooled aggregates.

    J counts surviving sketches only; failures counts the sketches that
    raised SingularSketch and were dropped from every aggregate.
    """

    per_sketch: Tuple[RegressionFit, ...]
    beta_bar: Array
    se_beta_bar: Array
    t_bar2: float
    se_t_bar2: float
    J: int
    m: int
    failures: int
    contrast: Array
    beta0: float
    row_sets: Tuple[Array, ...]


def pool_fits(fits, m, contrast, beta0, failures=0, row_sets=()):
    """Aggregate already-computed per-sketch fits into a PooledFit.

    The caller is responsible for the disjointness of the underlying row
    sets. ``pooled_fit`` uses this after partitioned uniform sampling; the
    Monte Carlo harness reuses it to pool countsketch fits computed on
    contiguous data blocks.
    """
    fits = list(fits)
    requested = len(fits) + failures
    if len(fits) < min(2, requested) or not fits:
        raise AllSketchesSingular(
            f"{len(fits)} of {requested} sketches usable, need at least "
            f"{min(2, max(requested, 1))}"
        )
    if not isinstance(contrast, ContrastVector):
        contrast = ContrastVector(np.asarray(contrast, dtype=float))
    c = contrast.c
    j_surv = len(fits)
    betas = np.stack([f.beta for f in fits])
    ses = np.stack([f.std_errors for f in fits])
    beta_bar = betas.mean(axis=0)
    if j_surv == 1:
        se_beta_bar = ses[0].copy()
    else:
        se_beta_bar = np.sqrt((ses**2).sum(axis=0) / (j_surv * (j_surv - 1)))
    t_vals = np.array(
        [(c @ f.beta - beta0) / np.sqrt(c @ f.covariance @ c) for f in fits]
    )
    t_bar2 = float(t_vals.mean())
    se_t_bar2 = float(t_vals.std(ddof=1)) if j_surv >= 2 else float("nan")
    return PooledFit(
        per_sketch=tuple(fits),
        beta_bar=beta_bar,
        se_beta_bar=se_beta_bar,
        t_bar2=t_bar2,
        se_t_bar2=se_t_bar2,
        J=j_surv,
        m=m,
        failures=failures,
        contrast=c,
        beta0=float(beta0),
        row_sets=tuple(np.asarray(r) for r in row_sets),
    )


def pooled_fit(
    y,
    x,
    m: int,
    J: int,
    seed: int,
    contrast: Union[ContrastVector, Sequence[float]],
    beta0: float,
    variance: Union[VarianceMode, str] = VarianceMode.HOMOSKEDASTIC,
) -> PooledFit:
    """Fit least squares on J disjoint uniform row blocks of size m.

    One global permutation of the n source rows is split into J blocks,
    each reweighted by sqrt(n/m) and fit separately. Blocks whose design
    loses rank are counted in ``failures`` and excluded; at least two
    survivors are required when more than one sketch was requested.
    """
    y = as_vector(y, "y")
    x = as_matrix(x, "x")
    n, k = x.shape
    if y.shape[0] != n:
        raise ValueError("y length must match the row count of x")
    if m <= k:
        raise ValueError(f"block size m={m} must exceed the column count {k}")
    if J < 1:
        raise ValueError("J must be a positive integer")
    if m * J > n:
        raise PartitionImpossible(
            f"cannot draw {J} disjoint blocks of {m} rows from {n}"
        )
    rng = np.random.default_rng(
        np.random.SeedSequence([seed % 2**64, _POOL_STREAM, n, m, J])
    )
    perm = rng.permutation(n)
    weights = np.full(m, np.sqrt(n / m))
    wcol = weights[:, None]
    fits = []
    blocks = []
    failures = 0
    for j in range(J):
        rows = perm[j * m : (j + 1) * m]
        try:
            fit = fit_sketched_rows(y[rows] * weights, x[rows] * wcol, n, mode=variance)
        except SingularSketch:
            failures += 1
            continue
        fits.append(fit)
        blocks.append(rows)
    return pool_fits(
        fits, m=m, contrast=contrast, beta0=beta0, failures=failures, row_sets=blocks
    )


def pooled_contrast_se(pf: PooledFit) -> float:
    """Standard error of the contrast applied to the pooled coefficients."""
    c = pf.contrast
    var_terms = [c @ f.covariance @ c for f in pf.per_sketch]
    if pf.J == 1:
        return float(np.sqrt(var_terms[0]))
    return float(np.sqrt(sum(var_terms) / (pf.J * (pf.J - 1))))


def t1_statistic(pf: PooledFit) -> float:
    """Pooled t statistic on averaged coefficients, normal critical values."""
    c = pf.contrast
    num = c @ pf.beta_bar - pf.beta0
    return float(num / pooled_contrast_se(pf))


def t2_statistic(pf: PooledFit) -> float:
    """Pooled t statistic on averaged per-sketch t's, t(J-1) critical values."""
    if pf.J < 2:
        raise ValueError("t2 needs at least two surviving sketches")
    if pf.se_t_bar2 == 0.0:
        raise DegenerateSpread("per-sketch t statistics are all identical")
    return float(np.sqrt(pf.J) * pf.t_bar2 / pf.se_t_bar2)


def pooled_variance_bound(n: int, m: int, J: int, epsilon: float) -> float:
    """Worst-case pooled-to-full variance ratio n/(mJ)/(1 - epsilon)."""
    if m * J > n:
        raise ValueError("bound requires m*J <= n")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return n / (m * J) / (1.0 - epsilon)
