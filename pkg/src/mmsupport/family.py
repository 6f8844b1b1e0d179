"""One-parameter sampling families and maximum-(weighted-)likelihood solvers.

A family is a log density ``(t, theta) -> float`` over a statistic interval
and a parameter interval (possibly truncated from unbounded spaces), plus the
null parameter value.  The scalar maximizer is a coarse grid followed by
golden-section refinement: the weighted likelihood of the folded-t family can
be nearly flat at small theta, and the grid guards against a wrong bracket.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericalError
from .tdist import FoldedNoncentralT, folded_nct_logpdf

GRID_POINTS = 64
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ParametricFamily:
    """Family {g(.|theta)} on a statistic interval, with truncation bounds."""

    log_density: Callable
    theta_lo: float
    theta_hi: float
    t_lo: float
    t_hi: float
    null_theta: float
    name: str = ""
    sampler: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if not self.theta_lo <= self.null_theta <= self.theta_hi:
            raise ValueError("null_theta must lie in [theta_lo, theta_hi]")
        if not self.t_lo < self.t_hi:
            raise ValueError("need t_lo < t_hi")

    def null_logpdf(self, t):
        return self.log_density(t, self.null_theta)

    def rvs(self, theta: float, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.sampler is None:
            raise NotImplementedError(f"family {self.name!r} has no sampler")
        return self.sampler(theta, size, rng)


@dataclass(frozen=True)
class WeightedLikelihood:
    """Weighted observations defining log Lbar(theta) = sum_j w_j log g(t_j|theta).

    The focus observation carries the largest weight; the others supply
    indirect evidence (or a pseudo-observation).
    """

    family: ParametricFamily
    observations: tuple
    focus_index: int

    def __post_init__(self):
        obs = tuple((float(t), float(w)) for t, w in self.observations)
        object.__setattr__(self, "observations", obs)
        weights = np.array([w for _, w in obs])
        if np.any(weights < 0.0):
            raise ValueError("weights must be nonnegative")
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        if not 0 <= self.focus_index < len(obs):
            raise ValueError("focus_index out of range")
        incidental = np.delete(weights, self.focus_index)
        if incidental.size and weights[self.focus_index] < incidental.max() - 1e-12:
            raise ValueError("focus weight must be >= every incidental weight")


@dataclass(frozen=True)
class MaximizeResult:
    theta: float
    value: float
    at_boundary: bool


def _golden_max(f, lo: float, hi: float, tol: float):
    """Golden-section maximization on [lo, hi] to absolute x-tolerance tol."""
    a, b = lo, hi
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:  # keep the left candidate on ties: smaller theta
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def golden_max_batch(f, lo, hi, tol: float = 1e-8):
    """Lockstep golden-section maximization over per-row brackets.

    ``f`` maps an array of points (one per row) to objective values per row;
    each iteration spends exactly one batched evaluation.  Ties keep the left
    candidate, so equal maxima resolve toward the smaller argument.
    """
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1 = np.asarray(f(x1), dtype=float)
    f2 = np.asarray(f(x2), dtype=float)
    for _ in range(200):
        if float(np.max(b - a)) <= tol:
            break
        left = f1 >= f2
        b = np.where(left, x2, b)
        a = np.where(left, a, x1)
        x1n = np.where(left, b - _INV_PHI * (b - a), x2)
        x2n = np.where(left, x1, a + _INV_PHI * (b - a))
        new_x = np.where(left, x1n, x2n)
        f_new = np.asarray(f(new_x), dtype=float)
        f1, f2 = np.where(left, f_new, f2), np.where(left, f1, f_new)
        x1, x2 = x1n, x2n
    take1 = f1 >= f2
    return np.where(take1, x1, x2), np.where(take1, f1, f2)


def maximize_scalar(
    objective, lo: float, hi: float, *, tol: float = 1e-8, n_grid: int = GRID_POINTS
) -> MaximizeResult:
    """Grid-then-golden maximization of a scalar objective on [lo, hi].

    The objective must accept numpy arrays.  Ties are broken toward the
    smaller argument; boundary maxima are legal and flagged.
    """
    if hi <= lo:
        raise ValueError("need lo < hi")
    grid = np.linspace(lo, hi, n_grid)
    vals = np.asarray(objective(grid), dtype=float)
    if np.all(np.isneginf(vals)) or np.any(np.isnan(vals)):
        raise NumericalError("objective is not finite on the search grid")
    best = int(np.argmax(vals))  # first max wins: smallest theta on ties
    b_lo = grid[max(best - 1, 0)]
    b_hi = grid[min(best + 1, n_grid - 1)]
    x, fx = _golden_max(lambda u: float(objective(u)), b_lo, b_hi, tol)

    tie_tol = 1e-12 * (1.0 + abs(fx))
    f_lo = float(objective(lo))
    f_hi = float(objective(hi))
    if f_lo >= fx - tie_tol:
        x, fx = lo, f_lo
    elif f_hi > fx + tie_tol:
        x, fx = hi, f_hi
    if not math.isfinite(fx):
        raise NumericalError("maximized objective is not finite")
    at_boundary = x <= lo + tol or x >= hi - tol
    return MaximizeResult(theta=float(x), value=float(fx), at_boundary=at_boundary)


def mle(fam: ParametricFamily, t: float, *, tol: float = 1e-8, full_output: bool = False):
    """Maximum-likelihood parameter for a single statistic t."""
    res = maximize_scalar(lambda th: fam.log_density(t, th), fam.theta_lo, fam.theta_hi, tol=tol)
    if res.theta >= fam.theta_hi - tol:
        warnings.warn(
            f"MLE hit the upper parameter bound {fam.theta_hi} of {fam.name!r}; "
            "consider raising the cap",
            stacklevel=2,
        )
    return res if full_output else res.theta


def weighted_log_likelihood(wl: WeightedLikelihood, theta):
    """Weighted sum of log densities at theta (scalar or array)."""
    th = np.asarray(theta, dtype=float)
    obs = [(t, w) for t, w in wl.observations if w > 0.0]
    ts = np.array([t for t, _ in obs])
    ws = np.array([w for _, w in obs])
    vals = wl.family.log_density(ts.reshape(-1, *([1] * th.ndim)), th[None, ...])
    out = np.tensordot(ws, vals, axes=(0, 0))
    return float(out) if np.ndim(out) == 0 else out


def mwle(wl: WeightedLikelihood, *, tol: float = 1e-8, full_output: bool = False):
    """Maximum weighted-likelihood parameter; same solver contract as mle."""
    fam = wl.family
    res = maximize_scalar(
        lambda th: weighted_log_likelihood(wl, th), fam.theta_lo, fam.theta_hi, tol=tol
    )
    if res.theta >= fam.theta_hi - tol:
        warnings.warn(
            f"MWLE hit the upper parameter bound {fam.theta_hi} of {fam.name!r}; "
            "consider raising the cap",
            stacklevel=2,
        )
    return res if full_output else res.theta


def null_weighted_likelihood(
    fam: ParametricFamily, t: float, t0: float = 0.0, n_eff: float = 1
) -> WeightedLikelihood:
    """Two-point weighted likelihood: pseudo-observation t0 at weight 1/(n_eff+1).

    ``n_eff`` is the effective observation count behind the statistic;
    ``n_eff = inf`` drops the pseudo-observation entirely.
    """
    if not n_eff >= 1:
        raise ValueError("n_eff must be >= 1")
    w0 = 0.0 if math.isinf(n_eff) else 1.0 / (n_eff + 1.0)
    return WeightedLikelihood(
        family=fam, observations=((t0, w0), (t, 1.0 - w0)), focus_index=1
    )


def folded_t_family(
    nu: float, theta_cap: float = 50.0, t_max: float = math.inf
) -> ParametricFamily:
    """Folded noncentral-t family with Theta truncated to [0, theta_cap]."""

    def sampler(theta, size, rng):
        return FoldedNoncentralT(theta, nu).rvs(size, rng)

    return ParametricFamily(
        log_density=lambda t, th: folded_nct_logpdf(t, th, nu),
        theta_lo=0.0,
        theta_hi=float(theta_cap),
        t_lo=0.0,
        t_hi=float(t_max),
        null_theta=0.0,
        name=f"folded-t(nu={nu:g})",
        sampler=sampler,
    )


def normal_location_family(
    t_lo: float = -5.0,
    t_hi: float = 5.0,
    sigma: float = 1.0,
    theta_lo: float | None = None,
    theta_hi: float | None = None,
) -> ParametricFamily:
    """Normal location family on a truncated statistic interval (test fixture)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    theta_lo = t_lo if theta_lo is None else theta_lo
    theta_hi = t_hi if theta_hi is None else theta_hi
    log_norm = -0.5 * math.log(2.0 * math.pi) - math.log(sigma)

    def log_density(t, th):
        t = np.asarray(t, dtype=float)
        th = np.asarray(th, dtype=float)
        out = log_norm - 0.5 * ((t - th) / sigma) ** 2
        return float(out) if out.ndim == 0 else out

    def sampler(theta, size, rng):
        return rng.normal(theta, sigma, size)

    return ParametricFamily(
        log_density=log_density,
        theta_lo=theta_lo,
        theta_hi=theta_hi,
        t_lo=t_lo,
        t_hi=t_hi,
        null_theta=0.0,
        name=f"normal-location(sigma={sigma:g})",
        sampler=sampler,
    )
