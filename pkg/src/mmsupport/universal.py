"""Universal densities: NML, NMWL, prior mixtures, and the capacity prior.

Each construction yields a density over the statistic space packaged with the
log of its normalizing constant.  NML divides the maximized likelihood
g(t; theta_hat(t)) by its integral Z; NMWL does the same for a weighted
likelihood with a down-weighted pseudo-observation, which keeps the
normalizer finite on families where plain NML diverges.  The capacity prior
is the mutual-information-maximizing input distribution on a parameter grid,
computed by Blahut-Arimoto iteration; its mixture minimizes the maximum
average log loss over the family.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import NonIntegrableError, NumericalError
from .family import (
    GRID_POINTS,
    ParametricFamily,
    golden_max_batch,
    null_weighted_likelihood,
)
from .quadrature import QuadratureSpec, gl_nodes, integrate, tail_decays

NML = "NML"
NMWL = "NMWL"
PRIOR_MIXTURE = "PriorMixture"
CAPACITY_MIXTURE = "CapacityMixture"

# Fixed-node resolution for redundancy / capacity integrals (panels x 16 nodes).
REDUNDANCY_PANELS = 64


@dataclass(frozen=True)
class UniversalDensity:
    """An evaluable density on the statistic space with its normalizer."""

    log_density: Callable
    log_Z: float
    kind: str
    family: ParametricFamily
    info: dict = field(default_factory=dict, compare=False)

    def pdf(self, t):
        out = np.exp(self.log_density(t))
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class DiscretePrior:
    """Probability masses on a strictly increasing parameter grid."""

    support_points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.support_points, dtype=float)
        ms = np.asarray(self.masses, dtype=float)
        object.__setattr__(self, "support_points", pts)
        object.__setattr__(self, "masses", ms)
        if pts.ndim != 1 or pts.size == 0 or ms.shape != pts.shape:
            raise ValueError("support points and masses must be matching 1-d arrays")
        if pts.size > 1 and not np.all(np.diff(pts) > 0.0):
            raise ValueError("support points must be strictly increasing")
        if np.any(ms < 0.0):
            raise ValueError("masses must be nonnegative")
        if abs(ms.sum() - 1.0) > 1e-12:
            raise ValueError("masses must sum to 1")

    @staticmethod
    def point_mass(theta: float) -> "DiscretePrior":
        return DiscretePrior(np.array([theta]), np.array([1.0]))


def domain_upper(fam: ParametricFamily, spec: QuadratureSpec) -> float:
    """Effective upper integration limit: t_hi, or the spec truncation if unbounded."""
    return fam.t_hi if math.isfinite(fam.t_hi) else spec.t_max


def _maximized_values(objective_grid, objective_pairs, lo, hi, ts, tol=1e-8):
    """Max over theta of a per-statistic objective, batched over statistics.

    ``objective_grid(ts, grid)`` must return a (len(ts), len(grid)) matrix;
    ``objective_pairs(ts, thetas)`` evaluates elementwise on equal-length
    arrays.  Returns (values, thetas).
    """
    grid = np.linspace(lo, hi, GRID_POINTS)
    mat = np.asarray(objective_grid(ts, grid), dtype=float)
    best = np.argmax(mat, axis=1)
    b_lo = grid[np.maximum(best - 1, 0)]
    b_hi = grid[np.minimum(best + 1, grid.size - 1)]
    thetas, values = golden_max_batch(lambda th: objective_pairs(ts, th), b_lo, b_hi, tol)

    # Boundary/tie handling: prefer the smaller parameter on ties, but accept
    # a strictly better upper endpoint.
    tie = 1e-12 * (1.0 + np.abs(values))
    snap_lo = mat[:, 0] >= values - tie
    thetas = np.where(snap_lo, lo, thetas)
    values = np.where(snap_lo, mat[:, 0], values)
    snap_hi = (~snap_lo) & (mat[:, -1] > values + tie)
    thetas = np.where(snap_hi, hi, thetas)
    values = np.where(snap_hi, mat[:, -1], values)
    if not np.all(np.isfinite(values)):
        raise NumericalError("maximized objective is not finite")
    return values, thetas


def _solver_evaluator(solve):
    """Wrap a batch solver (ts -> (values, thetas)) as a shape-preserving map."""

    def max_log(t):
        t = np.asarray(t, dtype=float)
        vals, _ = solve(np.atleast_1d(t).ravel())
        out = vals.reshape(np.shape(t))
        return float(out) if out.ndim == 0 else out

    return max_log


def _nml_solver(fam: ParametricFamily):
    def solve(ts):
        return _maximized_values(
            lambda ts_, grid: fam.log_density(ts_[:, None], grid[None, :]),
            fam.log_density,
            fam.theta_lo,
            fam.theta_hi,
            ts,
        )

    return solve


def _nmwl_solver(fam: ParametricFamily, t0: float, w0: float):
    w1 = 1.0 - w0

    def grid_objective(ts_, grid):
        focus = fam.log_density(ts_[:, None], grid[None, :])
        if w0 == 0.0:
            return focus
        pseudo = fam.log_density(np.asarray([t0]), grid[None, :])
        return w0 * pseudo + w1 * focus

    def pairs_objective(t_, th):
        if w0 == 0.0:
            return fam.log_density(t_, th)
        t_ = np.broadcast_to(np.asarray(t_, dtype=float), np.shape(th))
        both = fam.log_density(
            np.concatenate([t_, np.full_like(t_, t0)]), np.concatenate([th, th])
        )
        n = t_.size
        return w1 * both[:n] + w0 * both[n:]

    def solve(ts):
        return _maximized_values(
            grid_objective, pairs_objective, fam.theta_lo, fam.theta_hi, ts
        )

    return solve


def _maximizer_state(fam, thetas):
    """Classify maximizer locations: 0 at theta_lo, 2 at theta_hi, 1 interior."""
    eps = 1e-9 + 1e-7 * (fam.theta_hi - fam.theta_lo)
    return np.where(
        thetas <= fam.theta_lo + eps, 0, np.where(thetas >= fam.theta_hi - eps, 2, 1)
    )


def _breakpoints(fam, solve, lo: float, hi: float) -> list[float]:
    """Points where the maximizer moves on/off a parameter bound.

    The maximized likelihood has a curvature kink there; splitting the
    normalization integral at these points keeps the quadrature fast.
    """
    ts = np.linspace(lo, hi, 33)
    _, thetas = solve(ts)
    state = _maximizer_state(fam, thetas)
    breaks = []
    for i in range(len(ts) - 1):
        if state[i] == state[i + 1]:
            continue
        a, b = ts[i], ts[i + 1]
        sa = state[i]
        for _ in range(30):
            mid = 0.5 * (a + b)
            _, th_mid = solve(np.array([mid]))
            if _maximizer_state(fam, th_mid)[0] == sa:
                a = mid
            else:
                b = mid
            if b - a <= 1e-6 * (hi - lo):
                break
        breaks.append(0.5 * (a + b))
    return breaks


def _probe_and_normalize(fam, solve, spec, what):
    """Choose the integration tail, probe for divergence, and compute log Z.

    On an unbounded statistic space the truncation point extends (doubling
    from ``spec.t_max``) until the maximized-likelihood integrand falls below
    ``spec.abs_tol``; a tail that never decays raises NonIntegrableError.
    Returns (log_Z, effective upper limit, integration edges).
    """
    max_log_fn = _solver_evaluator(solve)
    integrand = lambda t: np.exp(max_log_fn(t))
    upper = domain_upper(fam, spec)
    if not math.isfinite(fam.t_hi):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # probes roam far into the tail
            while float(integrand(upper)) > spec.abs_tol:
                if spec.divergence_probe and not tail_decays(
                    integrand, upper, spec.abs_tol
                ):
                    raise NonIntegrableError(
                        f"{what} normalizer diverges for family {fam.name!r}: "
                        f"maximized likelihood does not decay beyond t={upper:g}"
                    )
                upper *= 2.0
                if upper > spec.t_max * 2.0**16:
                    raise NonIntegrableError(
                        f"{what} integrand tail never falls below tolerance "
                        f"for family {fam.name!r}"
                    )
    edges = [fam.t_lo, *_breakpoints(fam, solve, fam.t_lo, upper), upper]
    z = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-12:
            continue
        piece, _ = integrate(integrand, a, b, spec)
        z += piece
    if not z > 0.0:
        raise NumericalError(f"{what} normalizer is not positive")
    return math.log(z), upper, edges


def nml_density(fam: ParametricFamily, spec: QuadratureSpec | None = None) -> UniversalDensity:
    """Normalized maximum likelihood density g(t; theta_hat(t)) / Z."""
    spec = spec or QuadratureSpec()
    solve = _nml_solver(fam)
    max_loglik = _solver_evaluator(solve)
    log_z, upper, edges = _probe_and_normalize(fam, solve, spec, "NML")

    def log_density(t):
        return max_loglik(t) - log_z

    return UniversalDensity(
        log_density=log_density,
        log_Z=log_z,
        kind=NML,
        family=fam,
        info={"quadrature": spec, "t_upper": upper, "edges": edges},
    )


def nmwl_density(
    fam: ParametricFamily,
    t0: float = 0.0,
    n_eff: float = None,
    spec: QuadratureSpec | None = None,
) -> UniversalDensity:
    """Normalized maximum weighted likelihood with pseudo-observation t0.

    The pseudo-observation carries weight 1/(n_eff + 1); ``n_eff = inf``
    degenerates to plain NML.
    """
    if n_eff is None:
        raise TypeError("n_eff is required (effective observation count)")
    spec = spec or QuadratureSpec()
    wl0 = null_weighted_likelihood(fam, fam.t_lo, t0, n_eff)  # validates n_eff
    w0 = wl0.observations[0][1]
    solve = _nmwl_solver(fam, t0, w0)
    max_wll = _solver_evaluator(solve)
    log_z, upper, edges = _probe_and_normalize(fam, solve, spec, "NMWL")

    def log_density(t):
        return max_wll(t) - log_z

    return UniversalDensity(
        log_density=log_density,
        log_Z=log_z,
        kind=NMWL,
        family=fam,
        info={
            "t0": t0,
            "n_eff": n_eff,
            "pseudo_weight": w0,
            "quadrature": spec,
            "t_upper": upper,
            "edges": edges,
        },
    )


def prior_mixture_density(
    fam: ParametricFamily, prior: DiscretePrior, spec: QuadratureSpec | None = None
) -> UniversalDensity:
    """Mixture density over the family under a discrete prior (already normalized)."""
    pts = prior.support_points
    with np.errstate(divide="ignore"):
        log_masses = np.log(prior.masses)

    def log_density(t):
        t = np.asarray(t, dtype=float)
        ts = np.atleast_1d(t).ravel()
        mat = fam.log_density(ts[:, None], pts[None, :]) + log_masses[None, :]
        out = logsumexp(mat, axis=1).reshape(np.shape(t))
        return float(out) if out.ndim == 0 else out

    spec = spec or QuadratureSpec()
    return UniversalDensity(
        log_density=log_density,
        log_Z=0.0,
        kind=PRIOR_MIXTURE,
        family=fam,
        info={
            "prior": prior,
            "quadrature": spec,
            "t_upper": domain_upper(fam, spec),
        },
    )


def _channel_matrix(fam, grid, spec):
    upper = domain_upper(fam, spec)
    nodes, weights = gl_nodes(fam.t_lo, upper, REDUNDANCY_PANELS)
    log_g = fam.log_density(nodes[None, :], np.asarray(grid, dtype=float)[:, None])
    return nodes, weights, np.asarray(log_g, dtype=float)


def average_redundancy(
    fam: ParametricFamily,
    prior: DiscretePrior,
    gstar: UniversalDensity,
    spec: QuadratureSpec | None = None,
) -> np.ndarray:
    """KL divergence D(g(.|theta_k) || gstar) at each prior support point."""
    spec = spec or QuadratureSpec()
    nodes, weights, log_g = _channel_matrix(fam, prior.support_points, spec)
    log_gstar = np.asarray(gstar.log_density(nodes), dtype=float)
    if np.any(np.isnan(log_gstar)):
        raise NumericalError("universal density returned NaN on the quadrature grid")
    g = np.exp(log_g)
    integrand = np.where(g > 0.0, g * (log_g - log_gstar[None, :]), 0.0)
    if np.any(np.isnan(integrand)) or np.any(np.isposinf(integrand)):
        raise NumericalError("redundancy integrand is not finite (gstar vanishes?)")
    return integrand @ weights


@dataclass(frozen=True)
class CapacityResult:
    """Capacity prior with its Blahut-Arimoto convergence certificate."""

    prior: DiscretePrior
    capacity_nats: float
    gap: float
    iterations: int
    converged: bool
    lower_bounds: np.ndarray


def _newton_equalize(S, p, g, gw, log_g, redundancy_fn):
    """Solve the equalization conditions D_k(p) = C on an active set exactly.

    Newton iteration on [D_k(p) - C = 0 for k in S; sum p = 1] with the
    analytic Jacobian dD_k/dp_j = -int g_k g_j / q.  Components forced
    negative are dropped from the set; off-set points whose redundancy
    exceeds C are added.  Returns (p_full, D, lower, extra_evals) or None if
    the polish fails.
    """
    K = p.size
    evals = 0
    for _ in range(12):
        if S.size == 0:
            return None
        p_s = np.maximum(p[S], 1e-8)
        p_s = p_s / p_s.sum()
        dropped = False
        for _ in range(60):
            p_full = np.zeros(K)
            p_full[S] = p_s
            q = p_full @ g
            log_q = np.log(np.maximum(q, 1e-300))
            d_s = np.einsum("km,km->k", gw[S], log_g[S] - log_q[None, :])
            evals += 1
            cap = float(p_s @ d_s)
            resid = d_s - cap
            if float(np.max(np.abs(resid))) < 1e-11:
                break
            a = (gw[S] / np.maximum(q, 1e-300)[None, :]) @ g[S].T
            jac = np.zeros((S.size + 1, S.size + 1))
            jac[: S.size, : S.size] = -a
            jac[: S.size, -1] = -1.0
            jac[-1, : S.size] = 1.0
            rhs = np.concatenate([-resid, [1.0 - p_s.sum()]])
            try:
                step = np.linalg.solve(jac, rhs)
            except np.linalg.LinAlgError:
                return None
            dp = step[: S.size]
            lam = 1.0
            while lam > 1e-6 and np.any(p_s + lam * dp <= 0.0):
                lam *= 0.5
            if lam <= 1e-6:
                S = np.delete(S, int(np.argmin(p_s + dp)))
                dropped = True
                break
            p_s = p_s + lam * dp
        else:
            return None
        if dropped or S.size == 0:
            continue
        p_full = np.zeros(K)
        p_full[S] = p_s
        d_full = redundancy_fn(p_full)
        evals += 1
        cap = float(p_full @ d_full)
        dead = p_s <= 1e-12
        violators = np.setdiff1d(np.where(d_full > cap + 1e-10)[0], S)
        if violators.size == 0 and not np.any(dead):
            return p_full, d_full, cap, evals
        S = np.union1d(np.setdiff1d(S, S[dead]), violators)
    return None


def capacity_prior(
    fam: ParametricFamily,
    grid,
    spec: QuadratureSpec | None = None,
    max_iter: int = 2000,
    tol: float = 1e-4,
) -> CapacityResult:
    """Capacity-achieving prior on a parameter grid via Blahut-Arimoto.

    Convergence is certified by the duality gap: the maximum per-point
    redundancy minus the prior-averaged redundancy (a lower bound on the
    channel capacity, nondecreasing across iterations).  Plain Blahut-Arimoto
    crawls once the support has localized, so after the gap is moderately
    small the masses are polished by an active-set Newton solve of the
    equalization conditions; a failed polish falls back to plain iteration.
    Non-convergence within ``max_iter`` returns the best iterate with
    ``converged=False`` and a warning.
    """
    spec = spec or QuadratureSpec()
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < fam.theta_lo) or np.any(grid > fam.theta_hi):
        raise ValueError("grid must lie inside the family's parameter space")
    if grid.size == 1:
        return CapacityResult(
            prior=DiscretePrior.point_mass(float(grid[0])),
            capacity_nats=0.0,
            gap=0.0,
            iterations=0,
            converged=True,
            lower_bounds=np.zeros(1),
        )

    _, weights, log_g = _channel_matrix(fam, grid, spec)
    g = np.exp(log_g)
    gw = g * weights[None, :]

    def redundancy_at(p_):
        log_q = np.log(np.maximum(p_ @ g, 1e-300))
        return np.einsum("km,km->k", gw, log_g - log_q[None, :])

    p = np.full(grid.size, 1.0 / grid.size)
    redundancy = redundancy_at(p)
    iteration = 1
    lower = float(p @ redundancy)
    gap = float(redundancy.max()) - lower
    history = [lower]

    last_polish = -math.inf
    while iteration < max_iter and gap > tol:
        if gap <= max(tol, 1e-3) and iteration - last_polish >= 200:
            active = np.where((p > 1e-4) | (redundancy > lower - 2.0 * gap))[0]
            polish = _newton_equalize(active, p, g, gw, log_g, redundancy_at)
            last_polish = iteration
            if polish is not None:
                p_new, d_new, lower_new, evals = polish
                iteration += evals
                if lower_new >= history[-1]:
                    p, redundancy, lower = p_new, d_new, lower_new
                    gap = float(redundancy.max()) - lower
                    history.append(lower)
                    continue
        p = p * np.exp(redundancy - redundancy.max())
        p = p / p.sum()
        redundancy = redundancy_at(p)
        iteration += 1
        lower = float(p @ redundancy)
        gap = float(redundancy.max()) - lower
        history.append(lower)

    converged = gap <= tol
    if not converged:
        warnings.warn(
            f"Blahut-Arimoto stopped after {max_iter} iterations with duality gap "
            f"{gap:.3e} > {tol:.1e}",
            stacklevel=2,
        )
    return CapacityResult(
        prior=DiscretePrior(grid, p),
        capacity_nats=history[-1],
        gap=gap,
        iterations=iteration,
        converged=converged,
        lower_bounds=np.asarray(history),
    )


def capacity_mixture_density(
    fam: ParametricFamily, result: CapacityResult, spec: QuadratureSpec | None = None
) -> UniversalDensity:
    """Mixture under the capacity prior, tagged with its provenance."""
    spec = spec or QuadratureSpec()
    base = prior_mixture_density(fam, result.prior, spec)
    return UniversalDensity(
        log_density=base.log_density,
        log_Z=0.0,
        kind=CAPACITY_MIXTURE,
        family=fam,
        info={
            "capacity": result,
            "quadrature": spec,
            "t_upper": domain_upper(fam, spec),
        },
    )


def normalization(gstar: UniversalDensity, spec: QuadratureSpec | None = None) -> float:
    """Integral of a universal density over its own (truncated) domain.

    Splits at the stored maximizer-transition points, where present, so the
    quadrature converges quickly.
    """
    spec = spec or gstar.info.get("quadrature") or QuadratureSpec()
    fam = gstar.family
    upper = gstar.info.get("t_upper", domain_upper(fam, spec))
    edges = gstar.info.get("edges", [fam.t_lo, upper])
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a <= 1e-12:
            continue
        piece, _ = integrate(lambda t: gstar.pdf(t), a, b, spec)
        total += piece
    return total
