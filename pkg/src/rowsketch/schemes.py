"""Row-sketching operators.

Nine interchangeable schemes reduce an n-row matrix to an m-row sketch:
four row-sampling schemes (uniform without replacement, uniform with
replacement, Bernoulli, leverage-score) and five projections (Gaussian,
Rademacher, subsampled randomized Hadamard, sparse sign, countsketch).
Sampling schemes carry Horvitz-Thompson row weights so that the sketched
Gram matrix is unbiased for the source Gram matrix.

Every operator is a pure function of (scheme, n, m, seed); the
countsketch hash and sign streams additionally depend only on (seed, m)
so that a streaming accumulator can reproduce them without knowing n.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .linalg import Array, as_matrix, leverage_scores

MATERIALIZE_CAP = 100_000_000
_PROP_TOL = 1e-10


class InvalidDims(ValueError):
    """Sketch size request violates 1 <= m <= n."""


class DimMismatch(ValueError):
    """Operand shape disagrees with the operator's source dimension."""


class MissingSource(ValueError):
    """Scheme needs the source matrix at build time but none was given."""


class DuplicateRow(ValueError):
    """A streamed row index was already consumed."""


class SchemeId(enum.Enum):
    RS1 = "rs1"
    RS2 = "rs2"
    RS3 = "rs3"
    RS4 = "rs4"
    RP1 = "rp1"
    RP2 = "rp2"
    RP3 = "rp3"
    RP4 = "rp4"
    CS = "cs"

    @classmethod
    def parse(cls, label: str) -> "SchemeId":
        """Parse a scheme label, accepting "lev" for leverage sampling."""
        token = label.strip().lower()
        if token == "lev":
            return cls.RS4
        try:
            return cls(token)
        except ValueError:
            raise ValueError(f"unknown sketch scheme {label!r}") from None


_SCHEME_CODE = {s: i + 1 for i, s in enumerate(SchemeId)}

_SAMPLING = (SchemeId.RS1, SchemeId.RS2, SchemeId.RS3, SchemeId.RS4)


@dataclass(frozen=True)
class SampledRows:
    """Row indices into the source plus per-row scaling weights."""

    indices: Array
    weights: Array


@dataclass(frozen=True)
class HashSign:
    """Countsketch: bucket and sign per source row."""

    buckets: Array
    signs: Array


@dataclass(frozen=True)
class DenseProjection:
    """Explicit m x n projection matrix."""

    matrix: Array


@dataclass(frozen=True)
class SubsampledHadamard:
    """Randomized Hadamard transform sampled on `rows` of the padded grid.

    The operator is scale * P * H * D where H is the normalized Hadamard
    matrix of order padded_n, D holds `signs` on the first n source rows,
    and P keeps `rows`. Sources with n < padded_n are zero-padded.
    """

    signs: Array
    rows: Array
    padded_n: int
    scale: float


Representation = Union[SampledRows, HashSign, DenseProjection, SubsampledHadamard]


@dataclass(frozen=True)
class SketchOperator:
    scheme: SchemeId
    n: int
    m: int
    seed: int
    representation: Representation
    sparsity: Optional[int] = None
    seed_derived: bool = False

    @property
    def output_rows(self) -> int:
        """Actual sketch row count; differs from m only for Bernoulli."""
        if isinstance(self.representation, SampledRows):
            return len(self.representation.indices)
        return self.m


@dataclass(frozen=True)
class PropertyReport:
    scheme: SchemeId
    n: int
    m: int
    prop1_holds: bool
    prop2_holds: bool
    max_offdiag_pi_t_pi: float
    max_dev_pipit: float


def _rng(seed: int, scheme: SchemeId, n: int, m: int) -> np.random.Generator:
    entries = [int(seed) % (1 << 64), _SCHEME_CODE[scheme], n, m]
    return np.random.default_rng(np.random.SeedSequence(entries))


def _cs_key(seed: int) -> int:
    return int(seed) % (1 << 128)


def _cs_hash_sign(seed: int, m: int, n: int) -> tuple[Array, Array]:
    """Buckets and signs for rows 0..n-1 from a counter-based stream.

    Row i consumes raw words 2i and 2i+1 of the Philox stream keyed by
    seed, so random access by row index is possible without generating
    earlier rows.
    """
    raw = np.random.Philox(key=_cs_key(seed)).random_raw(2 * n)
    buckets = (raw[0::2] % np.uint64(m)).astype(np.int64)
    signs = 1.0 - 2.0 * (raw[1::2] & np.uint64(1)).astype(np.float64)
    return buckets, signs


def _cs_hash_sign_one(seed: int, m: int, i: int) -> tuple[int, float]:
    """Single-row variant of _cs_hash_sign via counter jump-ahead."""
    pos = 2 * i
    gen = np.random.Philox(key=_cs_key(seed))
    if pos // 4:
        gen.advance(pos // 4)
    words = gen.random_raw(4)
    bucket = int(words[pos % 4] % np.uint64(m))
    sign = 1.0 - 2.0 * float(words[pos % 4 + 1] & np.uint64(1))
    return bucket, sign


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def build_sketch(
    scheme: SchemeId,
    n: int,
    m: int,
    seed: int,
    source: Optional[Array] = None,
    sparsity: Optional[int] = None,
) -> SketchOperator:
    """Construct the sketching operator for the requested scheme.

    `source` is required only for leverage-score sampling. `sparsity`
    applies to the sparse-sign projection (default 3 nonzero rate 1/s).
    For the Bernoulli scheme m is the expected row count; the realized
    sketch may have more or fewer rows.
    """
    if n < 1 or m < 1 or m > n:
        raise InvalidDims(f"need 1 <= m <= n, got n={n}, m={m}")
    if sparsity is not None and scheme is not SchemeId.RP4:
        raise InvalidDims("sparsity applies only to the sparse projection")
    rng = _rng(seed, scheme, n, m)
    rep: Representation
    sp: Optional[int] = None

    if scheme is SchemeId.RS1:
        idx = rng.permutation(n)[:m]
        rep = SampledRows(idx, np.full(m, np.sqrt(n / m)))
    elif scheme is SchemeId.RS2:
        idx = rng.integers(0, n, size=m)
        rep = SampledRows(idx, np.full(m, np.sqrt(n / m)))
    elif scheme is SchemeId.RS3:
        keep = rng.random(n) < m / n
        idx = np.flatnonzero(keep)
        rep = SampledRows(idx, np.full(len(idx), np.sqrt(n / m)))
    elif scheme is SchemeId.RS4:
        if source is None:
            raise MissingSource("leverage-score sampling needs the source matrix")
        a = as_matrix(source)
        if a.shape[0] != n:
            raise DimMismatch(f"source has {a.shape[0]} rows, operator expects {n}")
        p = leverage_scores(a).probabilities
        idx = rng.choice(n, size=m, replace=True, p=p)
        rep = SampledRows(idx, 1.0 / np.sqrt(m * p[idx]))
    elif scheme is SchemeId.RP1:
        _check_dense(n, m)
        rep = DenseProjection(rng.standard_normal((m, n)) / np.sqrt(m))
    elif scheme is SchemeId.RP2:
        _check_dense(n, m)
        signs = rng.integers(0, 2, size=(m, n)) * 2 - 1
        rep = DenseProjection(signs / np.sqrt(m))
    elif scheme is SchemeId.RP3:
        n_pad = _next_pow2(n)
        signs = (rng.integers(0, 2, size=n) * 2 - 1).astype(np.float64)
        rows = rng.permutation(n_pad)[:m]
        rep = SubsampledHadamard(signs, rows, n_pad, np.sqrt(n_pad / m))
    elif scheme is SchemeId.RP4:
        _check_dense(n, m)
        sp = 3 if sparsity is None else int(sparsity)
        if sp < 1:
            raise InvalidDims("sparsity must be a positive integer")
        u = rng.random((m, n))
        mat = np.zeros((m, n))
        mat[u < 1.0 / (2 * sp)] = 1.0
        mat[u >= 1.0 - 1.0 / (2 * sp)] = -1.0
        rep = DenseProjection(mat * np.sqrt(sp / m))
    else:
        buckets, signs = _cs_hash_sign(seed, m, n)
        rep = HashSign(buckets, signs)

    return SketchOperator(
        scheme=scheme,
        n=n,
        m=m,
        seed=int(seed),
        representation=rep,
        sparsity=sp,
        seed_derived=True,
    )


def _check_dense(n: int, m: int) -> None:
    if n * m > MATERIALIZE_CAP:
        raise InvalidDims(
            f"dense projection with {n * m} entries exceeds cap {MATERIALIZE_CAP}"
        )


def apply_sketch(op: SketchOperator, a: Array) -> Array:
    """Compute the sketched matrix Pi A without materializing Pi."""
    a = as_matrix(a)
    if a.shape[0] != op.n:
        raise DimMismatch(f"matrix has {a.shape[0]} rows, operator expects {op.n}")
    rep = op.representation
    if isinstance(rep, SampledRows):
        return a[rep.indices] * rep.weights[:, None]
    if isinstance(rep, DenseProjection):
        return rep.matrix @ a
    if isinstance(rep, HashSign):
        out = np.empty((op.m, a.shape[1]))
        weighted = rep.signs[:, None] * a
        for j in range(a.shape[1]):
            out[:, j] = np.bincount(rep.buckets, weights=weighted[:, j], minlength=op.m)
        return out
    x = np.zeros((rep.padded_n, a.shape[1]))
    x[: op.n] = a * rep.signs[:, None]
    x = _fwht(x)
    return x[rep.rows] * (rep.scale / np.sqrt(rep.padded_n))


def _fwht(x: Array) -> Array:
    """In-order fast Walsh-Hadamard transform along axis 0 (unnormalized)."""
    n = x.shape[0]
    h = 1
    while h < n:
        x = x.reshape(n // (2 * h), 2, h, -1)
        top = x[:, 0] + x[:, 1]
        bot = x[:, 0] - x[:, 1]
        x = np.concatenate((top[:, None], bot[:, None]), axis=1)
        h *= 2
    return x.reshape(n, -1)


def materialize(op: SketchOperator, max_entries: int = MATERIALIZE_CAP) -> Array:
    """Dense Pi as an (output_rows x n) array; refuses oversized requests."""
    rows = op.output_rows
    rep = op.representation
    needed = rows * op.n
    if isinstance(rep, SubsampledHadamard):
        needed = max(needed, op.n * op.n)
    if needed > max_entries:
        raise ValueError(
            f"materializing {needed} entries exceeds the cap of {max_entries}"
        )
    if isinstance(rep, SampledRows):
        pi = np.zeros((rows, op.n))
        pi[np.arange(rows), rep.indices] = rep.weights
        return pi
    if isinstance(rep, HashSign):
        pi = np.zeros((rows, op.n))
        pi[rep.buckets, np.arange(op.n)] = rep.signs
        return pi
    if isinstance(rep, DenseProjection):
        return rep.matrix.copy()
    return apply_sketch(op, np.eye(op.n))


def check_pi_properties(op: SketchOperator, tol: float = _PROP_TOL) -> PropertyReport:
    """Measure the two exact-orthogonality properties on the realized Pi.

    Property 1: Pi' Pi has zero off-diagonal (sampling schemes satisfy
    this by construction; projections do not). Property 2: Pi Pi' equals
    (n/m) I on the realized rows (fails under with-replacement collisions
    and for non-uniform leverage weights).
    """
    pi = materialize(op)
    rows = pi.shape[0]
    gram = pi.T @ pi
    off = gram - np.diag(np.diag(gram))
    max_off = float(np.max(np.abs(off))) if off.size else 0.0
    outer = pi @ pi.T
    dev = outer - (op.n / op.m) * np.eye(rows)
    max_dev = float(np.max(np.abs(dev))) if dev.size else 0.0
    return PropertyReport(
        scheme=op.scheme,
        n=op.n,
        m=op.m,
        prop1_holds=max_off <= tol,
        prop2_holds=max_dev <= tol,
        max_offdiag_pi_t_pi=max_off,
        max_dev_pipit=max_dev,
    )


@dataclass
class CsAccumulator:
    """Streaming countsketch state; single writer, rows consumed once."""

    m: int
    cols: int
    seed: int
    table: Array
    seen: set = field(default_factory=set)
    hash_values: Optional[Array] = None
    sign_values: Optional[Array] = None


def countsketch_stream(
    m: int,
    cols: int,
    seed: int,
    hash_values: Optional[Array] = None,
    sign_values: Optional[Array] = None,
) -> CsAccumulator:
    """Open a countsketch accumulator for row-at-a-time updates.

    `hash_values` and `sign_values` override the seeded stream for
    hand-built fixtures; by default buckets and signs come from the same
    counter-based stream build_sketch uses, so a finished accumulator
    matches the batch sketch exactly.
    """
    if m < 1 or cols < 1:
        raise InvalidDims(f"need positive table dims, got m={m}, cols={cols}")
    if (hash_values is None) != (sign_values is None):
        raise ValueError("hash_values and sign_values must be given together")
    return CsAccumulator(
        m=m,
        cols=cols,
        seed=int(seed),
        table=np.zeros((m, cols)),
        hash_values=None if hash_values is None else np.asarray(hash_values),
        sign_values=None if sign_values is None else np.asarray(sign_values, dtype=float),
    )


def cs_update(acc: CsAccumulator, row_index: int, row: Array) -> None:
    """Fold one source row into the accumulator."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or len(row) != acc.cols:
        raise DimMismatch(f"row must have {acc.cols} entries")
    if row_index in acc.seen:
        raise DuplicateRow(f"row {row_index} was already streamed")
    if acc.hash_values is not None:
        bucket = int(acc.hash_values[row_index])
        sign = float(acc.sign_values[row_index])
    else:
        bucket, sign = _cs_hash_sign_one(acc.seed, acc.m, row_index)
    acc.seen.add(row_index)
    acc.table[bucket] += sign * row


def cs_merge(a: CsAccumulator, b: CsAccumulator) -> CsAccumulator:
    """Combine accumulators fed disjoint row ranges of the same stream."""
    if (a.m, a.cols, a.seed) != (b.m, b.cols, b.seed):
        raise ValueError("accumulators disagree on table shape or seed")
    if a.seen & b.seen:
        raise ValueError("accumulators saw overlapping row indices")
    return CsAccumulator(
        m=a.m,
        cols=a.cols,
        seed=a.seed,
        table=a.table + b.table,
        seen=a.seen | b.seen,
        hash_values=a.hash_values,
        sign_values=a.sign_values,
    )


def cs_finalize(acc: CsAccumulator) -> Array:
    """Return the finished m x cols sketch."""
    return acc.table.copy()


def serialize_operator(op: SketchOperator) -> str:
    """One-line text record from which the operator can be rebuilt."""
    if not op.seed_derived:
        raise ValueError("operator with injected representation is not serializable")
    record = f"scheme={op.scheme.value} n={op.n} m={op.m} seed={op.seed}"
    if op.sparsity is not None:
        record += f" sparsity={op.sparsity}"
    return record


def deserialize_operator(record: str, source: Optional[Array] = None) -> SketchOperator:
    """Rebuild an operator from its text record."""
    fields: dict[str, str] = {}
    for token in record.split():
        key, _, value = token.partition("=")
        if not value:
            raise ValueError(f"malformed token {token!r} in operator record")
        fields[key] = value
    try:
        scheme = SchemeId.parse(fields.pop("scheme"))
        n = int(fields.pop("n"))
        m = int(fields.pop("m"))
        seed = int(fields.pop("seed"))
    except KeyError as missing:
        raise ValueError(f"operator record is missing {missing}") from None
    sparsity = int(fields.pop("sparsity")) if "sparsity" in fields else None
    if fields:
        raise ValueError(f"unknown keys in operator record: {sorted(fields)}")
    return build_sketch(scheme, n, m, seed, source=source, sparsity=sparsity)
