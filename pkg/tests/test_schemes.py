"""Sketching operators: construction, application, streaming, properties."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rowsketch.schemes import (
    CsAccumulator,
    DenseProjection,
    DimMismatch,
    DuplicateRow,
    HashSign,
    InvalidDims,
    MissingSource,
    SampledRows,
    SchemeId,
    SketchOperator,
    apply_sketch,
    build_sketch,
    check_pi_properties,
    countsketch_stream,
    cs_finalize,
    cs_merge,
    cs_update,
    deserialize_operator,
    materialize,
    serialize_operator,
)

# Worked 5x2 matrix whose row norms are (1, 1, 0.559, 0.559, 0).
PENCIL_A = np.array(
    [
        [1.0, 0.0],
        [0.0, 1.0],
        [-0.25, 0.5],
        [0.25, -0.5],
        [0.0, 0.0],
    ]
)

# Hand-checkable 3x9 countsketch: bucket and sign assignments per row,
# 0-based, with the materialized operator and final sketch spelled out.
CS9_BUCKETS = np.array([1, 2, 0, 1, 0, 0, 2, 1, 0])
CS9_SIGNS = np.array([-1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0])
CS9_PI = np.array(
    [
        [0, 0, 1, 0, 1, -1, 0, 0, 1],
        [-1, 0, 0, -1, 0, 0, 0, -1, 0],
        [0, -1, 0, 0, 0, 0, 1, 0, 0],
    ],
    dtype=float,
)
# Per-bucket (row, sign) accumulation order implied by streaming rows 0..8.
CS9_TERMS = {
    0: [(2, 1.0), (4, 1.0), (5, -1.0), (8, 1.0)],
    1: [(0, -1.0), (3, -1.0), (7, -1.0)],
    2: [(1, -1.0), (6, 1.0)],
}


def cs9_state_after(a: np.ndarray, steps: int) -> np.ndarray:
    """Expected accumulator state once rows 0..steps-1 have streamed."""
    out = np.zeros((3, a.shape[1]))
    for bucket, terms in CS9_TERMS.items():
        for row, sign in terms:
            if row < steps:
                out[bucket] += sign * a[row]
    return out


def make_cs9_operator() -> SketchOperator:
    return SketchOperator(
        scheme=SchemeId.CS,
        n=9,
        m=3,
        seed=0,
        representation=HashSign(buckets=CS9_BUCKETS, signs=CS9_SIGNS),
    )


def test_rs1_build_selects_rows_9_5_1():
    # seed 102 draws the permutation prefix (8, 4, 0) at n=9, m=3
    op = build_sketch(SchemeId.RS1, n=9, m=3, seed=102)
    rep = op.representation
    assert isinstance(rep, SampledRows)
    assert_array_equal(rep.indices, [8, 4, 0])
    assert_allclose(rep.weights, np.sqrt(3.0) * np.ones(3))


def test_rs1_weights_and_uniqueness():
    op = build_sketch(SchemeId.RS1, n=50, m=20, seed=5)
    rep = op.representation
    assert len(np.unique(rep.indices)) == 20
    assert_allclose(rep.weights, np.sqrt(50 / 20) * np.ones(20))


def test_rs2_weights():
    op = build_sketch(SchemeId.RS2, n=50, m=20, seed=5)
    assert_allclose(op.representation.weights, np.sqrt(2.5) * np.ones(20))


def test_rs3_variable_rows_and_expected_count():
    op = build_sketch(SchemeId.RS3, n=40, m=10, seed=3)
    rep = op.representation
    assert op.m == 10
    assert_allclose(rep.weights, np.sqrt(4.0) * np.ones(len(rep.indices)))
    counts = []
    for seed in range(2000):
        rep = build_sketch(SchemeId.RS3, n=50, m=10, seed=seed).representation
        counts.append(len(rep.indices))
    counts = np.asarray(counts, dtype=float)
    stderr = counts.std(ddof=1) / np.sqrt(len(counts))
    assert abs(counts.mean() - 10.0) <= 3.0 * stderr


def test_rs4_requires_source_and_uses_leverage_weights():
    with pytest.raises(MissingSource):
        build_sketch(SchemeId.RS4, n=5, m=2, seed=0)
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 3))
    op = build_sketch(SchemeId.RS4, n=30, m=8, seed=1, source=a)
    rep = op.representation
    from rowsketch.linalg import leverage_scores

    p = leverage_scores(a).probabilities
    assert_allclose(rep.weights, 1.0 / np.sqrt(8 * p[rep.indices]))


def test_rs4_zero_leverage_row_never_sampled():
    ops = [
        build_sketch(SchemeId.RS4, n=5, m=3, seed=s, source=PENCIL_A)
        for s in range(50)
    ]
    for op in ops:
        assert 4 not in op.representation.indices


def test_build_rejects_bad_dims():
    with pytest.raises(InvalidDims):
        build_sketch(SchemeId.RS1, n=5, m=6, seed=0)
    with pytest.raises(InvalidDims):
        build_sketch(SchemeId.RP1, n=5, m=0, seed=0)


def test_rp4_zero_frequency_near_two_thirds():
    zeros = 0
    total = 0
    for seed in range(50):
        op = build_sketch(SchemeId.RP4, n=10, m=8, seed=seed)
        pi = materialize(op)
        zeros += int(np.sum(pi == 0.0))
        total += pi.size
    assert abs(zeros / total - 2.0 / 3.0) < 0.03


def test_rp4_sparsity_parameter():
    op = build_sketch(SchemeId.RP4, n=64, m=16, seed=2, sparsity=8)
    pi = materialize(op)
    values = np.unique(np.round(np.abs(pi[pi != 0.0]), 12))
    assert_allclose(values, [np.sqrt(8 / 16.0)])


def test_cs_materialized_matches_hand_example():
    op = make_cs9_operator()
    assert_array_equal(materialize(op), CS9_PI)


def test_cs_apply_matches_signed_row_sums():
    a = np.arange(36, dtype=float).reshape(9, 4) + 1.0
    sketch = apply_sketch(make_cs9_operator(), a)
    assert_allclose(sketch[0], a[2] + a[4] - a[5] + a[8])
    assert_allclose(sketch[1], -a[0] - a[3] - a[7])
    assert_allclose(sketch[2], -a[1] + a[6])
    assert_allclose(sketch, CS9_PI @ a)


def test_cs_one_nonzero_per_column_unit_norm():
    op = build_sketch(SchemeId.CS, n=200, m=16, seed=9)
    pi = materialize(op)
    assert_array_equal(np.sum(pi != 0.0, axis=0), np.ones(200, dtype=int))
    assert_allclose(np.linalg.norm(pi, axis=0), np.ones(200))


def test_pencil_selection_preserves_or_destroys_rank():
    keep_12 = SketchOperator(
        scheme=SchemeId.RS1,
        n=5,
        m=2,
        seed=0,
        representation=SampledRows(
            indices=np.array([0, 1]), weights=np.ones(2)
        ),
    )
    assert_array_equal(apply_sketch(keep_12, PENCIL_A), np.eye(2))
    keep_15 = SketchOperator(
        scheme=SchemeId.RS1,
        n=5,
        m=2,
        seed=0,
        representation=SampledRows(
            indices=np.array([0, 4]), weights=np.ones(2)
        ),
    )
    assert_array_equal(
        apply_sketch(keep_15, PENCIL_A), np.array([[1.0, 0.0], [0.0, 0.0]])
    )


def test_identity_selection_recovers_input():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(7, 3))
    op = SketchOperator(
        scheme=SchemeId.RS1,
        n=7,
        m=7,
        seed=0,
        representation=SampledRows(indices=np.arange(7), weights=np.ones(7)),
    )
    assert_array_equal(apply_sketch(op, a), a)


def test_apply_matches_materialized_operator():
    rng = np.random.default_rng(12)
    a = rng.normal(size=(32, 4))
    for scheme in SchemeId:
        kwargs = {"source": a} if scheme is SchemeId.RS4 else {}
        op = build_sketch(scheme, n=32, m=8, seed=21, **kwargs)
        direct = apply_sketch(op, a)
        assert np.max(np.abs(direct - materialize(op) @ a)) <= 1e-12


def test_apply_dim_mismatch():
    op = build_sketch(SchemeId.RS1, n=9, m=3, seed=0)
    with pytest.raises(DimMismatch):
        apply_sketch(op, np.ones((8, 2)))


def test_streaming_single_row():
    acc = countsketch_stream(
        m=3,
        cols=2,
        seed=0,
        hash_values=np.array([1]),
        sign_values=np.array([-1.0]),
    )
    cs_update(acc, 0, np.array([2.0, 5.0]))
    out = cs_finalize(acc)
    assert_array_equal(out, [[0.0, 0.0], [-2.0, -5.0], [0.0, 0.0]])


def test_streaming_reproduces_every_intermediate_state():
    a = np.arange(36, dtype=float).reshape(9, 4) + 1.0
    acc = countsketch_stream(
        m=3, cols=4, seed=0, hash_values=CS9_BUCKETS, sign_values=CS9_SIGNS
    )
    for s in range(9):
        cs_update(acc, s, a[s])
        assert_array_equal(acc.table, cs9_state_after(a, s + 1))
    assert_array_equal(cs_finalize(acc), CS9_PI @ a)


def test_streaming_rejects_duplicate_row():
    acc = countsketch_stream(m=4, cols=2, seed=7)
    cs_update(acc, 3, np.array([1.0, 1.0]))
    with pytest.raises(DuplicateRow):
        cs_update(acc, 3, np.array([1.0, 1.0]))


def test_streaming_any_order_matches_batch():
    rng = np.random.default_rng(42)
    a = rng.normal(size=(1000, 4))
    op = build_sketch(SchemeId.CS, n=1000, m=32, seed=17)
    batch = apply_sketch(op, a)
    acc = countsketch_stream(m=32, cols=4, seed=17)
    order = rng.permutation(1000)
    for i in order:
        cs_update(acc, int(i), a[i])
    assert np.max(np.abs(cs_finalize(acc) - batch)) <= 1e-12


def test_streaming_merge_disjoint_accumulators():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(100, 3))
    op = build_sketch(SchemeId.CS, n=100, m=8, seed=5)
    left = countsketch_stream(m=8, cols=3, seed=5)
    right = countsketch_stream(m=8, cols=3, seed=5)
    for i in range(50):
        cs_update(left, i, a[i])
    for i in range(50, 100):
        cs_update(right, i, a[i])
    merged = cs_merge(left, right)
    assert np.max(np.abs(cs_finalize(merged) - apply_sketch(op, a))) <= 1e-12
    with pytest.raises(ValueError):
        cs_merge(left, left)


def test_properties_uniform_without_replacement():
    report = check_pi_properties(build_sketch(SchemeId.RS1, n=24, m=6, seed=1))
    assert report.prop1_holds and report.prop2_holds
    assert report.max_offdiag_pi_t_pi <= 1e-10
    assert report.max_dev_pipit <= 1e-10


def test_properties_countsketch():
    report = check_pi_properties(build_sketch(SchemeId.CS, n=24, m=6, seed=1))
    assert not report.prop1_holds and not report.prop2_holds


def test_properties_gaussian():
    report = check_pi_properties(build_sketch(SchemeId.RP1, n=24, m=6, seed=1))
    assert not report.prop1_holds and not report.prop2_holds


def test_properties_bernoulli_sampling():
    report = check_pi_properties(build_sketch(SchemeId.RS3, n=64, m=16, seed=2))
    assert report.prop1_holds and report.prop2_holds


def test_properties_with_replacement_collisions():
    def has_collision(seed: int) -> bool:
        rep = build_sketch(SchemeId.RS2, n=6, m=4, seed=seed).representation
        return len(np.unique(rep.indices)) < 4

    seed_clean = next(s for s in range(100) if not has_collision(s))
    seed_collide = next(s for s in range(100) if has_collision(s))
    clean = check_pi_properties(build_sketch(SchemeId.RS2, n=6, m=4, seed=seed_clean))
    assert clean.prop1_holds and clean.prop2_holds
    collide = check_pi_properties(
        build_sketch(SchemeId.RS2, n=6, m=4, seed=seed_collide)
    )
    assert collide.prop1_holds and not collide.prop2_holds


def test_properties_leverage_sampling():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(40, 3))
    a[0] *= 9.0
    report = check_pi_properties(
        build_sketch(SchemeId.RS4, n=40, m=10, seed=4, source=a)
    )
    assert report.prop1_holds and not report.prop2_holds


def test_properties_srht_power_of_two():
    report = check_pi_properties(build_sketch(SchemeId.RP3, n=32, m=8, seed=3))
    assert not report.prop1_holds and report.prop2_holds


def test_srht_full_selection_is_orthonormal():
    op = build_sketch(SchemeId.RP3, n=16, m=16, seed=11)
    pi = materialize(op)
    assert np.max(np.abs(pi.T @ pi - np.eye(16))) <= 1e-10
    assert np.max(np.abs(pi @ pi.T - np.eye(16))) <= 1e-10


def test_srht_pads_to_power_of_two():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(12, 3))
    op = build_sketch(SchemeId.RP3, n=12, m=4, seed=6)
    sketch = apply_sketch(op, a)
    assert sketch.shape == (4, 3)
    # unbiased norm scale: mean of ||Pi v||^2 over seeds matches ||v||^2
    v = rng.normal(size=(12, 1))
    sq = [
        float(
            np.sum(
                apply_sketch(build_sketch(SchemeId.RP3, n=12, m=4, seed=s), v) ** 2
            )
        )
        for s in range(400)
    ]
    sq = np.asarray(sq)
    stderr = sq.std(ddof=1) / np.sqrt(len(sq))
    assert abs(sq.mean() - float(np.sum(v**2))) <= 3.0 * stderr


def test_uniform_gram_unbiased():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(12, 3))
    truth = a.T @ a
    for scheme in (SchemeId.RS1, SchemeId.RS2):
        grams = np.empty((2000, 3, 3))
        for seed in range(2000):
            sk = apply_sketch(build_sketch(scheme, n=12, m=4, seed=seed), a)
            grams[seed] = sk.T @ sk
        mean = grams.mean(axis=0)
        stderr = grams.std(axis=0, ddof=1) / np.sqrt(2000)
        assert np.all(np.abs(mean - truth) <= 3.0 * stderr + 1e-12)


def test_determinism_and_seed_sensitivity():
    a = build_sketch(SchemeId.RP2, n=20, m=5, seed=99)
    b = build_sketch(SchemeId.RP2, n=20, m=5, seed=99)
    assert_array_equal(a.representation.matrix, b.representation.matrix)
    c = build_sketch(SchemeId.RP2, n=20, m=5, seed=100)
    assert not np.array_equal(a.representation.matrix, c.representation.matrix)
    h1 = build_sketch(SchemeId.CS, n=100, m=10, seed=1).representation
    h2 = build_sketch(SchemeId.CS, n=100, m=10, seed=1).representation
    assert_array_equal(h1.buckets, h2.buckets)
    assert_array_equal(h1.signs, h2.signs)


def test_serialization_roundtrip():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(16, 2))
    for scheme in SchemeId:
        kwargs = {"source": a} if scheme is SchemeId.RS4 else {}
        op = build_sketch(scheme, n=16, m=4, seed=77, **kwargs)
        record = serialize_operator(op)
        rebuilt = deserialize_operator(record, source=a)
        assert rebuilt.scheme is op.scheme
        assert (rebuilt.n, rebuilt.m, rebuilt.seed) == (op.n, op.m, op.seed)
        assert np.max(np.abs(materialize(rebuilt) - materialize(op))) == 0.0


def test_serialization_rejects_injected_representation():
    with pytest.raises(ValueError):
        serialize_operator(make_cs9_operator())


def test_materialize_size_cap():
    op = build_sketch(SchemeId.RS1, n=10_000, m=100, seed=0)
    with pytest.raises(ValueError):
        materialize(op, max_entries=100_000)


def test_scheme_parsing_accepts_lev_alias():
    assert SchemeId.parse("lev") is SchemeId.RS4
    assert SchemeId.parse("RS1") is SchemeId.RS1
    with pytest.raises(ValueError):
        SchemeId.parse("rs9")
