"""Sketch-size rules: how many rows does the sketch need?

Three families. A coherence-driven lower bound for uniform sampling to
embed a K-dimensional column space; a deterministic moment rule keyed to
how many moments the design can be assumed to have; and two
inference-conscious rules that size the sketch so a t test of a given
effect keeps a target power. The quantile helpers at the bottom feed the
S(alpha, gamma) machinery and pooled-t critical values.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

from scipy.special import betaincinv, ndtri

from rowsketch.rounding import snap_ceil, snap_floor


class DomainError(ValueError):
    """Inputs left the region where a rule is defined."""


class SizeRule(Enum):
    COHERENCE = "coherence"
    M1_MOMENT = "m1_moment"
    M1_THIN_TAIL = "m1_thin_tail"
    M2 = "m2"
    M3 = "m3"


@dataclass(frozen=True)
class SizeRuleResult:
    """One rule evaluation: integer size, raw value, feasibility flag.

    Infeasible results (m > n) keep their computed size; nothing is
    clamped, the flag is the caller's signal.
    """

    rule: SizeRule
    m: int
    m_real: float
    feasible: bool
    inputs: Dict[str, float]


def inv_norm_cdf(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    return float(ndtri(p))


def s_value(alpha: float, gamma: float) -> float:
    """Power-targeting multiplier: the gamma quantile plus the 1-alpha quantile."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie strictly inside (0, 1)")
    return inv_norm_cdf(gamma) + inv_norm_cdf(1.0 - alpha)


def t_critical(dof: int, p: float) -> float:
    """Student-t quantile via the inverse regularized incomplete beta."""
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_critical(dof, 1.0 - p)
    x = betaincinv(dof / 2.0, 0.5, 2.0 * (1.0 - p))
    return math.sqrt(dof * (1.0 - x) / x)


def uniform_embedding_m(
    n: int, coherence: float, epsilon: float, delta: float, J: int, k: int
) -> int:
    """Rows needed for uniform sampling to embed a K-column space.

    Scales with the coherence (maximum leverage score): incoherent
    designs need about 6 eps^-2 K log(2JK/delta) rows regardless of n,
    while a single leverage-1 row forces m of order n.
    """
    if not k / n <= coherence <= 1.0:
        raise ValueError("coherence must lie in [k/n, 1]")
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("epsilon and delta must lie in (0, 1)")
    if J < 1:
        raise ValueError("J must be a positive integer")
    raw = 6.0 * epsilon**-2 * n * coherence * math.log(2.0 * J * k / delta)
    return max(1, snap_ceil(raw))


def m1_rule(
    n: int, k: int, r: Optional[float] = None, constant: float = 1.0
) -> SizeRuleResult:
    """Deterministic sketch size from the design's assumed tail behavior.

    With r moments assumed the rule is (nK)^(1+2/r) log(K) / n; omit r
    for thin-tailed (subgaussian-like) designs, where K log(nK) rows
    suffice. Heavier tails (small r) demand more rows and can exceed n,
    in which case the result is flagged infeasible but not clamped.
    """
    if r is None:
        m_real = constant * k * math.log(n * k)
        rule = SizeRule.M1_THIN_TAIL
        inputs = {"n": n, "K": k}
    else:
        if r <= 2.0:
            raise ValueError("moment rule needs r > 2")
        m_real = constant * (n * k) ** (1.0 + 2.0 / r) * math.log(k) / n
        rule = SizeRule.M1_MOMENT
        inputs = {"n": n, "K": k, "r": r}
    m = max(1, snap_floor(m_real))
    return SizeRuleResult(rule=rule, m=m, m_real=m_real, feasible=m <= n, inputs=inputs)


def implied_moments(n: int, k: int, m_over_k: float) -> float:
    """Moments the design must have for m/K observations per regressor.

    Inverts the moment rule: r = 2 log(nK) / (log(m/K) - log(log K)).
    """
    denom = math.log(m_over_k) - math.log(math.log(k))
    if denom <= 0.0:
        raise DomainError("m/K must exceed log K for the inversion")
    return 2.0 * math.log(n * k) / denom


def m2_rule(
    m1: int,
    var_contrast: float,
    effect: float,
    alpha: float,
    gamma: float,
    n: Optional[int] = None,
) -> SizeRuleResult:
    """Data-dependent sketch size for target power against a given effect.

    var_contrast is the estimated variance of the tested contrast from a
    preliminary sketch of size m1; the rule rescales m1 so the t test of
    the stated effect rejects with probability gamma at level alpha.
    """
    if var_contrast <= 0.0:
        raise ValueError("var_contrast must be positive")
    if effect == 0.0:
        raise ValueError("effect must be non-zero")
    s = s_value(alpha, gamma)
    m_real = s**2 * m1 * var_contrast / effect**2
    m = max(1, snap_floor(m_real))
    feasible = True if n is None else m <= n
    inputs = {
        "m1": m1,
        "var_estimate": var_contrast,
        "effect": effect,
        "alpha": alpha,
        "gamma": gamma,
    }
    return SizeRuleResult(rule=SizeRule.M2, m=m, m_real=m_real, feasible=feasible, inputs=inputs)


def m3_rule(n: int, tau2_inf: float, alpha: float, gamma: float) -> SizeRuleResult:
    """Data-oblivious sketch size from a hypothesized full-sample t value.

    tau2_inf plays the role of the t statistic the full sample would
    produce; m3 = n S^2 / tau2_inf^2 keeps power gamma at level alpha.
    """
    if tau2_inf == 0.0:
        raise ValueError("tau2_inf must be non-zero")
    s = s_value(alpha, gamma)
    m_real = n * s**2 / tau2_inf**2
    m = max(1, snap_floor(m_real))
    inputs = {"n": n, "tau2": tau2_inf, "alpha": alpha, "gamma": gamma}
    return SizeRuleResult(
        rule=SizeRule.M3, m=m, m_real=m_real, feasible=m <= n, inputs=inputs
    )


def countsketch_m(k: int, epsilon: float, delta: float) -> int:
    """Rows for a countsketch subspace embedding: K(K+1)/(eps^2 delta)."""
    if not 0.0 < epsilon < 1.0 or not 0.0 < delta < 1.0:
        raise ValueError("epsilon and delta must lie in (0, 1)")
    return max(1, snap_ceil(k * (k + 1) / (epsilon**2 * delta)))
