"""Scalar numerical kernels shared by the density, sampling and inference code.

Normal CDF evaluation is delegated to ``scipy.special`` (``ndtr`` and
``log_ndtr``; the latter switches to an asymptotic tail series for very
negative arguments), quadrature to QUADPACK and bracketed root finding to
Brent's method.  The Hessian and SPD inversion are small enough to keep local.
"""
from __future__ import annotations

import math
import warnings
from typing import Callable, Sequence

import numpy as np
from scipy import integrate as _integrate
from scipy import linalg as _linalg
from scipy import optimize as _optimize
from scipy import special as _special

from .errors import BadBracket, NonConvergence, NonFinite, NotPositiveDefinite

QUAD_SUBDIVISIONS = 10_000
ROOT_TOL = 1e-12
TAIL_RATIO = 1e-14


def normal_cdf(z):
    """Standard normal CDF; accepts scalars or arrays."""
    return _special.ndtr(z)


def log_normal_cdf(z):
    """``log(normal_cdf(z))`` without underflow in the lower tail.

    Stays finite far below the point where ``normal_cdf`` underflows, so
    products like ``exp(a) * normal_cdf(-b)`` can be formed as
    ``exp(a + log_normal_cdf(-b))``.
    """
    return _special.log_ndtr(z)


def log1mexp(d):
    """``log(1 - exp(d))`` for ``d <= 0``, accurate on both ends."""
    d = np.asarray(d, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(
            d > -math.log(2.0),
            np.log(-np.expm1(d)),
            np.log1p(-np.exp(d)),
        )
    return out[()] if out.ndim == 0 else out


def integrate(
    f: Callable[[float], float],
    lower: float,
    upper: float,
    rel_tol: float = 1e-10,
    *,
    truncate_at: float | None = None,
    points: Sequence[float] | None = None,
    abs_floor: float = 1e-300,
) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``[lower, upper]``.

    An infinite ``upper`` must come with ``truncate_at``, the finite point
    beyond which the integrand is negligible.  ``points`` are interior
    break points handed to the subdivision (e.g. the integrand's mode).

    Raises NonConvergence when the error estimate stays above
    ``rel_tol * |result|`` after the subdivision budget is spent.
    """
    if not 0.0 < rel_tol <= 1e-3:
        raise ValueError(f"rel_tol must lie in (0, 1e-3], got {rel_tol}")
    if math.isinf(upper):
        if truncate_at is None:
            raise ValueError("infinite upper limit needs a finite truncate_at")
        upper = truncate_at
    if upper <= lower:
        return 0.0
    pts = None
    if points is not None:
        pts = [p for p in points if lower < p < upper] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        value, abserr, info = _integrate.quad(
            f, lower, upper, epsabs=0.0, epsrel=rel_tol,
            limit=QUAD_SUBDIVISIONS, points=pts, full_output=1,
        )[:3]
    if not math.isfinite(value):
        raise NonFinite(f"integrand produced a non-finite integral on [{lower}, {upper}]")
    if abserr > max(rel_tol * abs(value), abs_floor):
        raise NonConvergence(
            f"quadrature error {abserr:.3g} exceeds {rel_tol:g} relative "
            f"(value {value:.6g}, {info['last']} subintervals)"
        )
    return float(value)


def find_root(g: Callable[[float], float], lo: float, hi: float, tol: float = ROOT_TOL) -> float:
    """Root of ``g`` inside ``[lo, hi]`` by Brent's bisection/interpolation hybrid."""
    glo, ghi = g(lo), g(hi)
    if glo == 0.0:
        return float(lo)
    if ghi == 0.0:
        return float(hi)
    if np.sign(glo) == np.sign(ghi):
        raise BadBracket(f"g({lo})={glo:.6g} and g({hi})={ghi:.6g} share a sign")
    return float(_optimize.brentq(g, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))


def find_roots(g, dg, lo, hi, tol: float = ROOT_TOL, maxiter: int = 200):
    """Vectorised safeguarded Newton iteration for increasing ``g``.

    ``g`` and ``dg`` map arrays to arrays elementwise.  Each component keeps
    its own bracket ``[lo, hi]`` with ``g(lo) <= 0 <= g(hi)``; a Newton step
    that leaves the bracket is replaced by bisection.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    x = 0.5 * (lo + hi)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(maxiter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        xi = x[idx]
        gi = g(xi, idx)
        neg = gi < 0.0
        lo[idx] = np.where(neg, xi, lo[idx])
        hi[idx] = np.where(neg, hi[idx], xi)
        d = dg(xi, idx)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = xi - gi / d
        ok = np.isfinite(step) & (step > lo[idx]) & (step < hi[idx])
        new = np.where(ok, step, 0.5 * (lo[idx] + hi[idx]))
        done = (np.abs(new - xi) <= tol * (1.0 + np.abs(xi))) | (hi[idx] - lo[idx] <= tol) | (gi == 0.0)
        x[idx] = np.where(gi == 0.0, xi, new)
        active[idx[done]] = False
    if active.any():
        raise NonConvergence(f"{int(active.sum())} roots unresolved after {maxiter} iterations")
    return x


def tail_bound(logf: Callable[[float], float], start: float, ratio: float = TAIL_RATIO, growth: float = 2.0) -> float:
    """Smallest located ``t > start`` with ``f(t) <= ratio * f(start)``.

    ``start`` should sit at or beyond the peak of a unimodal integrand; the
    bracket grows geometrically and the crossing is then polished by
    ``find_root`` on the log scale.
    """
    target = logf(start) + math.log(ratio)
    if not math.isfinite(target):
        raise NonFinite(f"log integrand not finite at {start}")
    lo = start
    hi = max(2.0 * start, start + 1.0)
    for _ in range(200):
        if logf(hi) < target:
            break
        lo, hi = hi, hi * growth
    else:
        raise NonConvergence("integrand tail does not decay")
    return find_root(lambda t: logf(t) - target, lo, hi, tol=1e-8 * hi)


def hessian_steps(x) -> np.ndarray:
    """Per-coordinate central-difference steps ``max(1e-4 |x_i|, 1e-6)``."""
    x = np.asarray(x, dtype=float)
    return np.maximum(1e-4 * np.abs(x), 1e-6)


def numeric_hessian(f: Callable[[np.ndarray], float], x, steps=None) -> np.ndarray:
    """Central second-difference Hessian of ``f`` at ``x``, symmetrised.

    Raises NonFinite if any of the ``2d^2 + 1`` evaluations is not finite.
    """
    x = np.asarray(x, dtype=float)
    h = hessian_steps(x) if steps is None else np.asarray(steps, dtype=float)
    if np.any(h <= 0):
        raise ValueError("Hessian steps must be strictly positive")
    d = x.size

    def ev(point):
        val = float(f(point))
        if not math.isfinite(val):
            raise NonFinite(f"objective not finite at {point}")
        return val

    f0 = ev(x)
    H = np.empty((d, d))
    for i in range(d):
        e_i = np.zeros(d)
        e_i[i] = h[i]
        H[i, i] = (ev(x + e_i) - 2.0 * f0 + ev(x - e_i)) / h[i] ** 2
        for j in range(i + 1, d):
            e_j = np.zeros(d)
            e_j[j] = h[j]
            H[i, j] = H[j, i] = (
                ev(x + e_i + e_j) - ev(x + e_i - e_j) - ev(x - e_i + e_j) + ev(x - e_i - e_j)
            ) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def spd_inverse(M) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via its Cholesky factor."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if not np.allclose(M, M.T, rtol=0.0, atol=1e-8 * max(1.0, np.abs(M).max())):
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        c, lower = _linalg.cho_factor(M, lower=True, check_finite=False)
    except _linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if np.any(np.diag(c) <= 0):
        raise NotPositiveDefinite("non-positive Cholesky pivot")
    inv = _linalg.cho_solve((c, lower), np.eye(M.shape[0]), check_finite=False)
    return 0.5 * (inv + inv.T)
