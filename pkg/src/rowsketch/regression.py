"""Least squares on full or sketched data, with finite-sample bound checks.

The sketched fit applies one operator jointly to [y X] so the response
and design see the same realized rows, then solves by SVD pseudoinverse.
The homoskedastic covariance is ssr/(m-K) times the inverse sketched
Gram matrix; because Horvitz-Thompson weights (or the countsketch scale)
are already folded into the sketched data, this single recipe equals
sigma2_hat * (n/m) * inv(Gram) for every scheme and collapses to the
textbook formula when m = n.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .embedding import singular_distortion
from .linalg import Array, RankDeficient, as_matrix, as_vector, numeric_rank, svd
from .schemes import SketchOperator, apply_sketch


class SingularSketch(RuntimeError):
    """The sketched design lost column rank; resampling may recover."""


class SingularRestriction(ValueError):
    """R cov R' is singular, so the Wald form cannot be inverted."""


class VarianceMode(enum.Enum):
    HOMOSKEDASTIC = "homo"
    SANDWICH = "sandwich"


def _parse_mode(mode) -> VarianceMode:
    if isinstance(mode, VarianceMode):
        return mode
    return VarianceMode(str(mode))


@dataclass(frozen=True)
class RegressionFit:
    beta: Array
    covariance: Array
    std_errors: Array
    ssr: float
    n_source: int
    m_used: int
    variance_mode: VarianceMode
    sigma2_hat: float


@dataclass(frozen=True)
class ContrastVector:
    c: Array

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        if c.ndim != 1 or np.linalg.norm(c) == 0.0:
            raise ValueError("contrast must be a non-zero vector")
        object.__setattr__(self, "c", c)


@dataclass(frozen=True)
class FTestResult:
    statistic: float
    q: int
    dof2: int
    noncentrality: float
    expected_f: float


def _solve(y: Array, x: Array, n_source: int, m_used: int, mode: VarianceMode):
    k = x.shape[1]
    dof = m_used - k
    if dof <= 0:
        raise ValueError(f"need more rows than regressors, got {m_used} vs {k}")
    factors = svd(x)
    s = factors.singular_values
    if s[-1] < 1e-10 * s[0]:
        collapsed = [int(i) for i in np.flatnonzero(s < 1e-10 * s[0])]
        raise RankDeficient(
            f"design is rank deficient, singular values {collapsed} collapsed",
            singular_values=s,
        )
    beta = factors.v @ ((factors.u.T @ y) / s)
    resid = y - x @ beta
    ssr = float(resid @ resid)
    inv_gram = (factors.v / s**2) @ factors.v.T
    sigma2_hat = (m_used / n_source) * ssr / dof
    if mode is VarianceMode.HOMOSKEDASTIC:
        cov = (ssr / dof) * inv_gram
    else:
        meat = x.T @ (resid[:, None] ** 2 * x)
        cov = inv_gram @ meat @ inv_gram
    return RegressionFit(
        beta=beta,
        covariance=cov,
        std_errors=np.sqrt(np.diag(cov)),
        ssr=ssr,
        n_source=n_source,
        m_used=m_used,
        variance_mode=mode,
        sigma2_hat=sigma2_hat,
    )


def ols(y: Array, x: Array, mode=VarianceMode.HOMOSKEDASTIC) -> RegressionFit:
    """Full-sample least squares via SVD pseudoinverse."""
    x = as_matrix(x)
    y = as_vector(y)
    if len(y) != x.shape[0]:
        raise ValueError("y and X must have the same number of rows")
    return _solve(y, x, x.shape[0], x.shape[0], _parse_mode(mode))


def sketched_ols(
    y: Array, x: Array, op: SketchOperator, mode=VarianceMode.HOMOSKEDASTIC
) -> RegressionFit:
    """Least squares on the jointly sketched (y, X)."""
    x = as_matrix(x)
    y = as_vector(y)
    if len(y) != x.shape[0]:
        raise ValueError("y and X must have the same number of rows")
    z = apply_sketch(op, np.column_stack([y, x]))
    return fit_sketched_rows(z[:, 0], z[:, 1:], op.n, mode=mode)


def fit_sketched_rows(
    y_sk: Array, x_sk: Array, n_source: int, mode=VarianceMode.HOMOSKEDASTIC
) -> RegressionFit:
    """Least squares on rows that were already sketched elsewhere.

    Covariance scaling only needs the source row count, so callers that
    build sketches by hand (streaming accumulators, block pooling) get
    the same fit sketched_ols would produce.
    """
    x_sk = as_matrix(x_sk)
    y_sk = as_vector(y_sk)
    if len(y_sk) != x_sk.shape[0]:
        raise ValueError("y and X must have the same number of rows")
    try:
        return _solve(y_sk, x_sk, n_source, x_sk.shape[0], _parse_mode(mode))
    except RankDeficient as exc:
        raise SingularSketch(
            f"sketched design has rank below {x_sk.shape[1]} "
            f"with {x_sk.shape[0]} sketched rows"
        ) from exc


def lemma3_check(
    fit_full: RegressionFit,
    fit_sketch: RegressionFit,
    x: Array,
    op: SketchOperator,
) -> dict:
    """Residual and coefficient guarantees of the embedded fit.

    The residual check compares sums of squares, SSR_sk <= (1+eps)SSR.
    The coefficient check uses the residual norm with the root of the
    realized distortion, |beta_sk - beta| <= sqrt(eps)*sqrt(SSR)/
    sigma_min(X); the root comes from the near-orthogonality step of
    the proof and is the form the guarantee actually delivers.
    """
    x = as_matrix(x)
    eps = singular_distortion(x, op)
    sigma_min = svd(x).singular_values[-1]
    ssr_ratio = fit_sketch.ssr / fit_full.ssr
    beta_dist = float(np.linalg.norm(fit_sketch.beta - fit_full.beta))
    bound = np.sqrt(eps) * np.sqrt(fit_full.ssr) / sigma_min
    return {
        "ssr_ratio": ssr_ratio,
        "beta_dist": beta_dist,
        "bound": bound,
        "epsilon_used": eps,
        "ssr_ok": bool(ssr_ratio <= 1.0 + eps + 1e-12),
        "beta_ok": bool(beta_dist <= bound + 1e-12),
    }


def inverse_gram_distortion(
    x: Array, op: SketchOperator, c: ContrastVector
) -> dict:
    """Contrast-variance distortion of the inverse sketched Gram matrix."""
    x = as_matrix(x)
    eps = singular_distortion(x, op)
    xsk = apply_sketch(op, x)
    if numeric_rank(xsk) < x.shape[1]:
        raise SingularSketch("sketched design lost rank")
    inv_full = np.linalg.inv(x.T @ x)
    inv_sk = np.linalg.inv(xsk.T @ xsk)
    vec = c.c
    rel = abs(vec @ (inv_full - inv_sk) @ vec) / (vec @ inv_full @ vec)
    bound = eps / (1.0 - eps) if eps < 1.0 else np.inf
    return {
        "relative_error": float(rel),
        "bound": float(bound),
        "epsilon_used": eps,
        "ok": bool(rel <= bound + 1e-12),
    }


def mse_ratio_bounds(n: int, m: int, epsilon: float) -> dict:
    """Two-sided envelope for the sketched-to-full contrast variance ratio."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if m > n:
        raise ValueError("m cannot exceed n")
    return {"lower": (n / m) / (1.0 + epsilon), "upper": (n / m) / (1.0 - epsilon)}


def hetero_mse_bound(omega_diag: Array, n: int, m: int, epsilon: float) -> float:
    """Variance-ratio envelope under heteroskedastic errors."""
    omega = as_vector(omega_diag)
    if np.any(omega <= 0.0):
        raise ValueError("error variances must be positive")
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    spread = float(omega.max() / omega.min())
    return spread * (n / m) * (1.0 + epsilon) / (1.0 - epsilon) ** 2


def countsketch_centering(omega_diag: Array, m: int, n: int) -> Array:
    """Diagonal of E[Pi'Pi Omega Pi'Pi] for a countsketch Pi.

    The expectation is Omega + (1/m)(tr(Omega) I - Omega); for Omega =
    sigma^2 I this is sigma^2 (n + m - 1)/m times the identity.
    """
    omega = as_vector(omega_diag)
    if len(omega) != n:
        raise ValueError("omega_diag must have length n")
    if m < 1:
        raise ValueError("m must be at least 1")
    return (1.0 - 1.0 / m) * omega + omega.sum() / m


def noncentrality(r_mat: Array, r_val: Array, beta_truth: Array, cov: Array) -> float:
    """Shift parameter of the Wald form at the supplied true coefficients."""
    r_mat = as_matrix(r_mat)
    diff = r_mat @ np.asarray(beta_truth, dtype=float) - as_vector(r_val)
    mid = r_mat @ cov @ r_mat.T
    try:
        return float(diff @ np.linalg.solve(mid, diff))
    except np.linalg.LinAlgError:
        raise SingularRestriction("R cov R' is singular") from None


def f_test(
    fit: RegressionFit, r_mat: Array, r_val: Array, beta_truth: Array | None = None
) -> FTestResult:
    """Wald F test of R beta = r on a fitted model."""
    r_mat = as_matrix(r_mat)
    r_val = as_vector(r_val)
    q = r_mat.shape[0]
    if r_mat.shape[1] != len(fit.beta) or len(r_val) != q:
        raise ValueError("restriction dimensions do not match the fit")
    dof2 = fit.m_used - len(fit.beta)
    diff = r_mat @ fit.beta - r_val
    mid = r_mat @ fit.covariance @ r_mat.T
    if numeric_rank(mid, rel_tol=1e-12) < q:
        raise SingularRestriction("R cov R' is singular")
    statistic = float(diff @ np.linalg.solve(mid, diff)) / q
    phi = 0.0
    if beta_truth is not None:
        phi = noncentrality(r_mat, r_val, beta_truth, fit.covariance)
    expected = dof2 * (q + phi) / (q * (dof2 - 2)) if dof2 > 2 else np.inf
    return FTestResult(
        statistic=statistic, q=q, dof2=dof2, noncentrality=phi, expected_f=expected
    )


def f_pvalue(statistic: float, q: int, dof2: int) -> float:
    """Upper tail of the F(q, dof2) distribution via incomplete beta."""
    if statistic < 0:
        raise ValueError("F statistic must be non-negative")
    x = dof2 / (dof2 + q * statistic)
    return float(betainc(dof2 / 2.0, q / 2.0, x))


def serialize_fit(fit: RegressionFit, scheme: str = "none", seed=0) -> str:
    """Flat CSV with a metadata header line."""
    lines = [
        f"# n={fit.n_source} m={fit.m_used} scheme={scheme} seed={seed} "
        f"variance_mode={fit.variance_mode.value}",
        "coef_name,estimate,std_error",
    ]
    for i, (b, se) in enumerate(zip(fit.beta, fit.std_errors)):
        lines.append(f"b{i},{b:.12g},{se:.12g}")
    return "\n".join(lines) + "\n"
