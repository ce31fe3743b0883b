"""Dense matrix primitives: SVD, norms, leverage scores, numeric rank.

Matrices are plain float64 ndarrays in row-major order; :func:`as_matrix`
is the validating constructor that every public entry point runs its
inputs through, so NaN or Inf never make it past the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

Array = NDArray[np.float64]

RANK_REL_TOL = 1e-10


class NonConvergence(RuntimeError):
    """The underlying factorization failed to converge."""


class RankDeficient(ValueError):
    """A full-column-rank matrix was required.

    Carries the singular values so callers can report which directions
    collapsed.
    """

    def __init__(self, message: str, singular_values: Array | None = None):
        super().__init__(message)
        self.singular_values = singular_values


def as_matrix(a: ArrayLike, name: str = "matrix") -> Array:
    """Validate and return ``a`` as a finite 2-D float64 array."""
    out = np.asarray(a, dtype=np.float64)
    if out.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


def as_vector(v: ArrayLike, name: str = "vector") -> Array:
    """Validate and return ``v`` as a finite 1-D float64 array."""
    out = np.asarray(v, dtype=np.float64)
    if out.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class SvdFactors:
    """Thin SVD of an n x k matrix.

    ``u`` has orthonormal columns (n x k), ``singular_values`` is
    nonincreasing and nonnegative, ``v`` is k x k orthonormal, and
    ``u @ diag(singular_values) @ v.T`` reconstructs the input to
    1e-8 relative Frobenius error.
    """

    u: Array
    singular_values: Array
    v: Array

    def reconstruct(self) -> Array:
        return (self.u * self.singular_values) @ self.v.T


@dataclass(frozen=True)
class LeverageProfile:
    """Row leverage scores of a full-column-rank matrix.

    ``scores`` are the hat-matrix diagonal (each in [0, 1], summing to the
    column count), ``coherence`` their maximum, and ``probabilities`` the
    importance-sampling distribution scores / cols.
    """

    scores: Array
    coherence: float
    probabilities: Array


def svd(a: ArrayLike) -> SvdFactors:
    """Thin SVD of a tall matrix (rows >= cols)."""
    mat = as_matrix(a)
    n, k = mat.shape
    if n < k:
        raise ValueError(f"svd requires rows >= cols, got {n} x {k}")
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"svd did not converge: {exc}") from exc
    return SvdFactors(u=u, singular_values=s, v=vt.T)


def singular_values(a: ArrayLike) -> Array:
    """Singular values of ``a``, descending, without forming the factors."""
    mat = as_matrix(a)
    try:
        return np.linalg.svd(mat, compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"svd did not converge: {exc}") from exc


def frobenius_norm(a: ArrayLike) -> float:
    return float(np.linalg.norm(as_matrix(a), "fro"))


def spectral_norm(a: ArrayLike) -> float:
    mat = as_matrix(a)
    if min(mat.shape) == 0:
        return 0.0
    s = singular_values(mat if mat.shape[0] >= mat.shape[1] else mat.T)
    return float(s[0])


def leverage_scores(a: ArrayLike) -> LeverageProfile:
    """Leverage profile of a full-column-rank matrix.

    Scores are computed from the exact thin SVD as the squared row norms
    of U, which equals the hat-matrix diagonal.

    Raises
    ------
    RankDeficient
        If the smallest singular value is below ``RANK_REL_TOL`` times the
        largest.
    """
    factors = svd(a)
    s = factors.singular_values
    if s[0] == 0.0 or s[-1] < RANK_REL_TOL * s[0]:
        raise RankDeficient(
            f"matrix is rank deficient: singular values {s}", singular_values=s
        )
    scores = np.einsum("ij,ij->i", factors.u, factors.u)
    k = factors.u.shape[1]
    return LeverageProfile(
        scores=scores, coherence=float(np.max(scores)), probabilities=scores / k
    )


def numeric_rank(a: ArrayLike, rel_tol: float = RANK_REL_TOL) -> int:
    """Number of singular values at least ``rel_tol`` times the largest."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError(f"rel_tol must be in (0, 1), got {rel_tol}")
    mat = as_matrix(a)
    s = singular_values(mat if mat.shape[0] >= mat.shape[1] else mat.T)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s >= rel_tol * s[0]))
