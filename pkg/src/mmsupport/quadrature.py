"""One-dimensional quadrature with self-reported error estimates.

Two rules are provided: an adaptive Simpson scheme and a composite
Gauss-Legendre scheme whose panel count doubles until two successive
refinements agree.  Both return ``(value, error_estimate)`` so callers can
certify their own tolerances.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError

ADAPTIVE_SIMPSON = "adaptive-simpson"
GAUSS_LEGENDRE = "gauss-legendre-composite"

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


@dataclass(frozen=True)
class QuadratureSpec:
    """Integration policy: rule, tolerances, and tail truncation point."""

    rule: str = GAUSS_LEGENDRE
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    t_max: float = 20.0
    divergence_probe: bool = True

    def __post_init__(self):
        if self.rule not in (ADAPTIVE_SIMPSON, GAUSS_LEGENDRE):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("tolerances must be positive")

    def refined(self, factor: float = 0.1) -> "QuadratureSpec":
        """Same spec with tolerances tightened by ``factor``."""
        return QuadratureSpec(
            rule=self.rule,
            abs_tol=self.abs_tol * factor,
            rel_tol=self.rel_tol * factor,
            t_max=self.t_max,
            divergence_probe=self.divergence_probe,
        )


def _gl_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def gl_nodes(a: float, b: float, n_panels: int, order: int = 16):
    """Nodes and weights of a composite Gauss-Legendre rule on [a, b]."""
    if not b > a:
        raise ValueError("need b > a")
    x0, w0 = _gl_rule(order)
    edges = np.linspace(a, b, n_panels + 1)
    half = np.diff(edges) / 2.0
    mid = (edges[:-1] + edges[1:]) / 2.0
    nodes = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    weights = (half[:, None] * w0[None, :]).ravel()
    return nodes, weights


def _eval(f, x: np.ndarray) -> np.ndarray:
    """Evaluate f on an array, falling back to a scalar loop if needed."""
    try:
        y = np.asarray(f(x), dtype=float)
        if y.shape == x.shape:
            return y
    except Exception:
        pass
    return np.array([float(f(xi)) for xi in x])


def _integrate_gl(f, a: float, b: float, spec: QuadratureSpec):
    n_panels = 8
    nodes, weights = gl_nodes(a, b, n_panels)
    prev = float(np.dot(weights, _eval(f, nodes)))
    while n_panels <= 4096:
        n_panels *= 2
        nodes, weights = gl_nodes(a, b, n_panels)
        cur = float(np.dot(weights, _eval(f, nodes)))
        err = abs(cur - prev)
        if err <= max(spec.abs_tol, spec.rel_tol * abs(cur)):
            return cur, err
        prev = cur
    raise NumericalError(
        f"composite Gauss-Legendre did not converge on [{a}, {b}] "
        f"within 4096 panels (last change {abs(cur - prev):.3e})"
    )


def _integrate_simpson(f, a: float, b: float, spec: QuadratureSpec):
    def simpson(x0, x2, f0, f1, f2):
        return (x2 - x0) / 6.0 * (f0 + 4.0 * f1 + f2)

    fa, fb = float(f(a)), float(f(b))
    m = 0.5 * (a + b)
    fm = float(f(m))
    whole = simpson(a, b, fa, fm, fb)
    # Interval stack: (a, b, fa, fm, fb, approx, local tol, depth)
    stack = [(a, b, fa, fm, fb, whole, max(spec.abs_tol, spec.rel_tol * abs(whole)), 0)]
    total = 0.0
    err_total = 0.0
    n_intervals = 0
    while stack:
        x0, x2, f0, f1, f2, approx, tol, depth = stack.pop()
        n_intervals += 1
        if n_intervals > 200_000:
            raise NumericalError("adaptive Simpson exceeded 200000 intervals")
        xm = 0.5 * (x0 + x2)
        xl = 0.5 * (x0 + xm)
        xr = 0.5 * (xm + x2)
        fl = float(f(xl))
        fr = float(f(xr))
        left = simpson(x0, xm, f0, fl, f1)
        right = simpson(xm, x2, f1, fr, f2)
        delta = left + right - approx
        if depth >= 60:
            raise NumericalError("adaptive Simpson hit maximum recursion depth")
        if abs(delta) <= 15.0 * tol:
            total += left + right + delta / 15.0
            err_total += abs(delta) / 15.0
        else:
            stack.append((x0, xm, f0, fl, f1, left, tol / 2.0, depth + 1))
            stack.append((xm, x2, f1, fr, f2, right, tol / 2.0, depth + 1))
    return total, err_total


def integrate(f, a: float, b: float, spec: QuadratureSpec | None = None):
    """Integrate ``f`` over [a, b] under ``spec``; returns (value, error)."""
    spec = spec or QuadratureSpec()
    if not np.isfinite(a) or not np.isfinite(b):
        raise ValueError("integrate requires finite bounds; truncate first")
    if b <= a:
        raise ValueError("need b > a")
    if spec.rule == GAUSS_LEGENDRE:
        return _integrate_gl(f, a, b, spec)
    return _integrate_simpson(f, a, b, spec)


def tail_decays(f, t_max: float, abs_tol: float) -> bool:
    """Probe whether ``f`` decays fast enough at infinity to be integrable.

    Compares f at t_max and 2*t_max.  Flat tails fail outright; tails are
    also required to shed mass per octave (t*f(t) decreasing), which rejects
    harmonic ~1/t decay whose integral still diverges.
    """
    f1 = float(f(t_max))
    f2 = float(f(2.0 * t_max))
    if f2 <= abs_tol:
        return True
    if f2 > 0.9 * f1:
        return False
    if 2.0 * t_max * f2 > 0.9 * (t_max * f1):
        return False
    return True
