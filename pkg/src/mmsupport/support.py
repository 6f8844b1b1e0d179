"""Support: the change in log odds that an observation transmits.

``support = log g1*(t) - log g0(t)`` compares a universal alternative
density against the null member of the family.  The maximum-likelihood-ratio
upper bound replaces g1* with the likelihood maximized over the whole
parameter space; for NML the bound exceeds the support by exactly log Z.
Hypothetical prior odds enter only afterwards, via ``posterior_log_odds``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

from .family import ParametricFamily, mle
from .universal import UniversalDensity

LN2 = math.log(2.0)
LN10 = math.log(10.0)

#: Reference level often quoted for strong support, in nats.
STRONG_SUPPORT_NATS = 5.0


@dataclass(frozen=True)
class SupportRecord:
    """Per-feature support summary (all log quantities in nats)."""

    feature_id: str
    statistic: float
    support_nats: float
    upper_bound_nats: float
    simultaneous_nats: Optional[float] = None
    posterior_log_odds: Optional[dict] = None
    flags: tuple = field(default=())


def check_pi0(pi0: float) -> float:
    pi0 = float(pi0)
    if not 0.0 < pi0 < 1.0:
        raise ValueError(f"hypothetical null probability must be in (0, 1), got {pi0}")
    return pi0


def support(gstar: UniversalDensity, log_g0, t: float) -> float:
    """log g1*(t) - log g0(t) in nats.

    ``log_g0`` is the null log density (callable).  A vanishing null density
    yields +inf rather than an exception; callers flag it.
    """
    num = float(gstar.log_density(t))
    den = float(log_g0(t))
    if den == -math.inf:
        return math.inf
    return num - den


def upper_bound_support(fam: ParametricFamily, t: float) -> float:
    """Maximum-likelihood-ratio bound log g(t; theta_hat(t)) - log g0(t)."""
    theta_hat = mle(fam, t)
    return float(fam.log_density(t, theta_hat)) - float(fam.null_logpdf(t))


def posterior_log_odds(support_nats: float, pi0: float) -> float:
    """Posterior log odds of the alternative under a hypothetical pi0."""
    pi0 = check_pi0(pi0)
    return math.log((1.0 - pi0) / pi0) + support_nats


def convert_units(support_nats: float, unit: str) -> float:
    """Convert a value in nats to nats, bits, or bans."""
    if unit == "nats":
        return support_nats
    if unit == "bits":
        return support_nats / LN2
    if unit == "bans":
        return support_nats / LN10
    raise ValueError(f"unknown unit {unit!r}; expected nats, bits, or bans")
