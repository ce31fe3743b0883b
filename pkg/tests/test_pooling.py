"""Tests for divide-and-pool estimation across disjoint sketches."""

import numpy as np
import pytest
import scipy.stats
from numpy.testing import assert_allclose, assert_array_equal

from rowsketch.linalg import svd
from rowsketch.pooling import (
    AllSketchesSingular,
    DegenerateSpread,
    PartitionImpossible,
    PooledFit,
    pool_fits,
    pooled_fit,
    pooled_variance_bound,
    t1_statistic,
    t2_statistic,
)
from rowsketch.regression import ContrastVector, ols, sketched_ols
from rowsketch.schemes import SampledRows, SchemeId, SketchOperator, build_sketch


def make_data(n, k, seed, sigma=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, k))
    x[:, 0] = 1.0
    beta = np.arange(1, k + 1, dtype=float)
    y = x @ beta + sigma * rng.standard_normal(n)
    return y, x, beta


def last_coord(k):
    c = np.zeros(k)
    c[-1] = 1.0
    return ContrastVector(c)


def test_pooled_variance_bound_values():
    # J = n/m with vanishing distortion recovers full-sample efficiency.
    assert pooled_variance_bound(10000, 100, 100, 1e-12) == pytest.approx(1.0)
    assert pooled_variance_bound(1_000_000, 10_000, 10, 0.1) == pytest.approx(100.0 / 9.0)
    assert pooled_variance_bound(1000, 100, 2, 0.5) == pytest.approx(10.0)


def test_pooled_variance_bound_validation():
    with pytest.raises(ValueError):
        pooled_variance_bound(1000, 300, 4, 0.1)  # mJ > n
    with pytest.raises(ValueError):
        pooled_variance_bound(1000, 100, 2, 0.0)
    with pytest.raises(ValueError):
        pooled_variance_bound(1000, 100, 2, 1.0)


def test_partition_disjoint_and_sized():
    y, x, _ = make_data(1000, 3, seed=0)
    pf = pooled_fit(y, x, m=100, J=7, seed=5, contrast=last_coord(3), beta0=3.0)
    assert pf.J == 7
    assert pf.failures == 0
    assert pf.m == 100
    all_rows = np.concatenate(pf.row_sets)
    assert all_rows.size == 700
    assert np.unique(all_rows).size == 700  # pairwise disjoint
    assert all_rows.min() >= 0 and all_rows.max() < 1000
    for rows in pf.row_sets:
        assert rows.size == 100


def test_partition_impossible():
    y, x, _ = make_data(1000, 3, seed=1)
    with pytest.raises(PartitionImpossible):
        pooled_fit(y, x, m=100, J=11, seed=5, contrast=last_coord(3), beta0=3.0)


def test_m_must_exceed_columns():
    y, x, _ = make_data(200, 4, seed=2)
    with pytest.raises(ValueError):
        pooled_fit(y, x, m=4, J=2, seed=5, contrast=last_coord(4), beta0=4.0)


def test_j1_reduces_to_single_sketch():
    y, x, _ = make_data(600, 3, seed=3)
    c = last_coord(3)
    pf = pooled_fit(y, x, m=150, J=1, seed=9, contrast=c, beta0=3.0)
    assert pf.J == 1
    single = pf.per_sketch[0]
    assert_array_equal(pf.beta_bar, single.beta)
    assert_array_equal(pf.se_beta_bar, single.std_errors)
    t_direct = (single.beta[2] - 3.0) / np.sqrt(single.covariance[2, 2])
    assert t1_statistic(pf) == pytest.approx(t_direct, rel=1e-12)
    with pytest.raises(ValueError):
        t2_statistic(pf)


def test_per_sketch_fits_match_weighted_blocks():
    y, x, _ = make_data(900, 3, seed=4)
    n, m = 900, 180
    pf = pooled_fit(y, x, m=m, J=4, seed=21, contrast=last_coord(3), beta0=3.0)
    scale = np.sqrt(n / m)
    for fit, rows in zip(pf.per_sketch, pf.row_sets):
        ys = scale * y[rows]
        xs = scale * x[rows]
        beta_ref = np.linalg.lstsq(xs, ys, rcond=None)[0]
        assert_allclose(fit.beta, beta_ref, rtol=1e-9)
        resid = ys - xs @ beta_ref
        cov_ref = (resid @ resid) / (m - 3) * np.linalg.inv(xs.T @ xs)
        assert_allclose(fit.covariance, cov_ref, rtol=1e-8)
        assert fit.m_used == m
        assert fit.n_source == n


def test_aggregation_formulas():
    y, x, _ = make_data(1200, 3, seed=6)
    c = last_coord(3)
    pf = pooled_fit(y, x, m=200, J=5, seed=13, contrast=c, beta0=3.0)
    betas = np.stack([f.beta for f in pf.per_sketch])
    ses = np.stack([f.std_errors for f in pf.per_sketch])
    assert_allclose(pf.beta_bar, betas.mean(axis=0), rtol=1e-12)
    assert_allclose(pf.se_beta_bar, np.sqrt((ses**2).sum(axis=0) / (5 * 4)), rtol=1e-12)
    t_j = np.array(
        [(f.beta[2] - 3.0) / np.sqrt(f.covariance[2, 2]) for f in pf.per_sketch]
    )
    assert pf.t_bar2 == pytest.approx(t_j.mean(), rel=1e-12)
    assert pf.se_t_bar2 == pytest.approx(t_j.std(ddof=1), rel=1e-12)
    assert t2_statistic(pf) == pytest.approx(
        np.sqrt(5) * t_j.mean() / t_j.std(ddof=1), rel=1e-12
    )
    var_terms = [f.covariance[2, 2] for f in pf.per_sketch]
    t1_ref = (betas.mean(axis=0)[2] - 3.0) / np.sqrt(sum(var_terms) / (5 * 4))
    assert t1_statistic(pf) == pytest.approx(t1_ref, rel=1e-12)


def test_jensen_direction():
    y, x, _ = make_data(1500, 4, seed=7)
    for seed in range(6):
        pf = pooled_fit(y, x, m=150, J=6, seed=seed, contrast=last_coord(4), beta0=4.0)
        ses = np.stack([f.std_errors for f in pf.per_sketch])
        floor = ses.mean(axis=0) / np.sqrt(pf.J)
        assert np.all(pf.se_beta_bar >= floor - 1e-12)


def test_pool_fits_counts_failures():
    y, x, _ = make_data(800, 3, seed=8)
    op_a = build_sketch(SchemeId.RS1, n=800, m=120, seed=1)
    op_b = build_sketch(SchemeId.RS1, n=800, m=120, seed=2)
    fit_a = sketched_ols(y, x, op_a)
    fit_b = sketched_ols(y, x, op_b)
    pf = pool_fits([fit_a, fit_b], m=120, contrast=last_coord(3), beta0=3.0, failures=2)
    assert pf.J == 2
    assert pf.failures == 2
    assert_allclose(pf.beta_bar, (fit_a.beta + fit_b.beta) / 2.0, rtol=1e-12)


def test_pool_fits_requires_survivors():
    y, x, _ = make_data(800, 3, seed=9)
    op = build_sketch(SchemeId.RS1, n=800, m=120, seed=1)
    fit = sketched_ols(y, x, op)
    with pytest.raises(AllSketchesSingular):
        pool_fits([], m=120, contrast=last_coord(3), beta0=3.0, failures=3)
    # one survivor out of a multi-sketch request is not poolable
    with pytest.raises(AllSketchesSingular):
        pool_fits([fit], m=120, contrast=last_coord(3), beta0=3.0, failures=1)
    # one survivor out of a single-sketch request is fine
    pf = pool_fits([fit], m=120, contrast=last_coord(3), beta0=3.0, failures=0)
    assert pf.J == 1


def test_all_sketches_singular():
    y, x, _ = make_data(600, 3, seed=10)
    x = x.copy()
    x[:, 2] = 0.0  # every block is rank deficient
    with pytest.raises(AllSketchesSingular):
        pooled_fit(y, x, m=100, J=4, seed=3, contrast=last_coord(3), beta0=0.0)


def test_singular_blocks_excluded():
    # The dummy column is active in only a few rows, so some blocks miss it.
    rng = np.random.default_rng(11)
    n = 600
    x = np.column_stack(
        [np.ones(n), rng.standard_normal(n), np.zeros(n)]
    )
    x[rng.choice(n, size=4, replace=False), 2] = 1.0
    y = x @ np.array([1.0, 2.0, 3.0]) + rng.standard_normal(n)
    hit = None
    for seed in range(200):
        try:
            pf = pooled_fit(y, x, m=100, J=6, seed=seed, contrast=last_coord(3), beta0=3.0)
        except AllSketchesSingular:
            continue
        if pf.failures > 0:
            hit = pf
            break
    assert hit is not None
    assert hit.J + hit.failures == 6
    assert hit.J >= 2
    assert len(hit.per_sketch) == hit.J
    assert len(hit.row_sets) == hit.J
    betas = np.stack([f.beta for f in hit.per_sketch])
    assert_allclose(hit.beta_bar, betas.mean(axis=0), rtol=1e-12)


def test_t2_degenerate_spread():
    y, x, _ = make_data(500, 3, seed=12)
    op = build_sketch(SchemeId.RS1, n=500, m=100, seed=4)
    fit = sketched_ols(y, x, op)
    pf = pool_fits([fit, fit], m=100, contrast=last_coord(3), beta0=3.0)
    assert pf.se_t_bar2 == 0.0
    with pytest.raises(DegenerateSpread):
        t2_statistic(pf)


def test_determinism_and_seed_sensitivity():
    y, x, _ = make_data(700, 3, seed=13)
    c = last_coord(3)
    a = pooled_fit(y, x, m=100, J=5, seed=42, contrast=c, beta0=3.0)
    b = pooled_fit(y, x, m=100, J=5, seed=42, contrast=c, beta0=3.0)
    assert_array_equal(a.beta_bar, b.beta_bar)
    for ra, rb in zip(a.row_sets, b.row_sets):
        assert_array_equal(ra, rb)
    d = pooled_fit(y, x, m=100, J=5, seed=43, contrast=c, beta0=3.0)
    assert not np.array_equal(a.row_sets[0], d.row_sets[0])


def test_null_calibration_t1_and_t2():
    # Under the null, T1 against normal and T2 against t(J-1) critical
    # values should both reject close to the nominal 5% level.
    n, m, J, k = 10000, 1000, 10, 3
    crit1 = scipy.stats.norm.ppf(0.975)
    crit2 = scipy.stats.t.ppf(0.975, J - 1)
    c = last_coord(k)
    reps = 2000
    rej1 = 0
    rej2 = 0
    rng = np.random.default_rng(2024)
    for rep in range(reps):
        x = rng.standard_normal((n, k))
        y = x @ np.ones(k) + rng.standard_normal(n)
        pf = pooled_fit(y, x, m=m, J=J, seed=rep, contrast=c, beta0=1.0)
        if abs(t1_statistic(pf)) > crit1:
            rej1 += 1
        if abs(t2_statistic(pf)) > crit2:
            rej2 += 1
    assert 0.03 <= rej1 / reps <= 0.07
    assert 0.03 <= rej2 / reps <= 0.07


def test_pooling_beats_single_sketch():
    # Monte Carlo variance of the pooled estimate is well below the
    # single-sketch variance at the same m.
    y, x, _ = make_data(2000, 3, seed=14)
    c = last_coord(3)
    pooled = []
    single = []
    for seed in range(300):
        pf = pooled_fit(y, x, m=200, J=5, seed=seed, contrast=c, beta0=3.0)
        pooled.append(pf.beta_bar[2])
        sf = pooled_fit(y, x, m=200, J=1, seed=seed, contrast=c, beta0=3.0)
        single.append(sf.beta_bar[2])
    assert np.var(pooled) < 0.5 * np.var(single)


def test_theorem3_efficiency_bound():
    # Conditional-on-design variance ratio of the pooled estimator obeys
    # n/(mJ)/(1 - eps_hat) with eps_hat the worst per-block distortion.
    n, k, m, J = 4000, 3, 250, 4
    y, x, _ = make_data(n, k, seed=15)
    c = np.zeros(k)
    c[-1] = 1.0
    factors = svd(x)
    u = factors.u
    full_var = c @ np.linalg.inv(x.T @ x) @ c
    scale = np.sqrt(n / m)
    ok = 0
    for seed in range(200):
        pf = pooled_fit(y, x, m=m, J=J, seed=seed, contrast=ContrastVector(c), beta0=3.0)
        eps_hat = 0.0
        pooled_var = 0.0
        for rows in pf.row_sets:
            usk = scale * u[rows]
            sing = np.linalg.svd(usk, compute_uv=False)
            eps_hat = max(eps_hat, np.max(np.abs(1.0 - sing**2)))
            xs = scale * x[rows]
            pooled_var += c @ np.linalg.inv(xs.T @ xs) @ c
        pooled_var /= J**2
        bound = pooled_variance_bound(n, m, J, eps_hat) if eps_hat < 1.0 else np.inf
        if pooled_var / full_var <= bound + 1e-9:
            ok += 1
    assert ok == 200


def test_pooled_fit_close_to_full_sample():
    # Sanity: with J*m = n the pooled estimate hugs the full-sample fit.
    y, x, _ = make_data(3000, 3, seed=16)
    full = ols(y, x)
    pf = pooled_fit(y, x, m=300, J=10, seed=1, contrast=last_coord(3), beta0=3.0)
    assert np.linalg.norm(pf.beta_bar - full.beta) < 0.2
