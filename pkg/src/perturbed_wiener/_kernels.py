"""Compiled summed log-likelihoods used inside the optimiser loop.

These mirror ``model.log_pdf_joint`` and ``model.log_pdf_S`` branch for
branch, but loop over the sample in one compiled function instead of
issuing a few dozen small numpy calls per evaluation.  The special
functions are scipy's own (``log_ndtr`` and ``erfcx``), reached through
their Cython C entry points.

Inputs must satisfy s > 0 and r > 0 (the ``Sample`` type guarantees it).
"""
from __future__ import annotations

import ctypes
import math

import numba
from numba.extending import get_cython_function_address

_dbl_fn = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double, ctypes.c_int)
_log_ndtr = _dbl_fn(get_cython_function_address("scipy.special.cython_special", "__pyx_fuse_1log_ndtr"))
_erfcx = _dbl_fn(get_cython_function_address("scipy.special.cython_special", "__pyx_fuse_1erfcx"))

LOG_2PI = math.log(2.0 * math.pi)
SQRT_HALF_PI = math.sqrt(math.pi / 2.0)
SQRT2 = math.sqrt(2.0)
LN2 = math.log(2.0)


@numba.njit
def _log1mexp(d):
    if d > -LN2:
        return math.log(-math.expm1(d))
    return math.log1p(-math.exp(d))


@numba.njit
def _mills_lower(z):
    # Phi(z) / phi(z) for z <= 0
    return SQRT_HALF_PI * _erfcx(-z / SQRT2, 0)


@numba.njit
def _log_survival(s, mu, sigma2, B):
    sd = math.sqrt(sigma2 * s)
    la = _log_ndtr((B - mu * s) / sd, 0)
    lb = 2.0 * mu * B / sigma2 + _log_ndtr((-B - mu * s) / sd, 0)
    return la + _log1mexp(lb - la)


@numba.njit
def s_loglik(s, mu1, sigma1sq, B):
    """Sum of log f_S over ``s``."""
    total = s.size * math.log(mu1 / B)
    for i in range(s.size):
        total += _log_survival(s[i], mu1, sigma1sq, B)
    return total


@numba.njit
def _joint_one(s, r, mu1, sigma1sq, mu2, sigma2sq, B, sig1, sig2, lmu):
    V = sigma1sq * s + sigma2sq * r
    gap = B - mu1 * s - mu2 * r
    lpref = lmu - 0.5 * LOG_2PI - 1.5 * math.log(V) - gap * gap / (2.0 * V)
    slope = mu2 * sigma1sq - mu1 * sigma2sq
    A1 = B * sigma2sq + s * slope
    A2 = -B * sigma2sq + s * slope
    kappa = math.sqrt(r) / (sig1 * sig2 * math.sqrt(s * V))
    z1 = kappa * A1
    z2 = kappa * A2
    if z1 < 0.0:
        diff = z1 * _mills_lower(z1) - z2 * _mills_lower(z2)
        if diff <= 0.0:
            return -math.inf
        return lpref - 0.5 * (LOG_2PI + z1 * z1) - math.log(kappa) + math.log(diff)
    l1 = math.log(abs(A1)) + _log_ndtr(z1, 0)
    if A2 >= 0.0:
        l2 = 0.5 * (z2 - z1) * (z2 + z1) + math.log(A2) + _log_ndtr(z2, 0)
        return lpref + l1 + _log1mexp(min(l2 - l1, 0.0))
    l2 = math.log(-A2) - 0.5 * (LOG_2PI + z1 * z1) + math.log(_mills_lower(min(z2, 0.0)))
    hi = max(l1, l2)
    return lpref + hi + math.log1p(math.exp(-abs(l1 - l2)))


@numba.njit
def joint_loglik(s, r, mu1, sigma1sq, mu2, sigma2sq, B):
    """Sum of the joint (S, R) log-density over paired arrays."""
    sig1 = math.sqrt(sigma1sq)
    sig2 = math.sqrt(sigma2sq)
    lmu = math.log(mu1 / B)
    total = 0.0
    for i in range(s.size):
        total += _joint_one(s[i], r[i], mu1, sigma1sq, mu2, sigma2sq, B, sig1, sig2, lmu)
    return total
