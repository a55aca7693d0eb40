"""Perturbed Wiener hitting-time model: parameter types and closed-form densities.

A Wiener process starts at 0 and runs with drift ``mu1`` and squared
diffusion ``sigma1sq`` until an intervention, after which it continues from
its current position with ``(mu2, sigma2sq)`` until it first reaches the
boundary ``B``.  ``S`` is the time from the start to the intervention
(inspected at a time independent of the start, so length biased) and ``R``
the time from the intervention to the crossing.

Every density has a ``log_*`` array kernel taking plain floats/arrays, used
on the likelihood hot path, and a friendlier wrapper taking the dataclasses.
Terms of the form ``exp(a) * Phi(-b)`` are always formed in the log domain.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special as _special

from . import numerics
from .numerics import log1mexp, log_normal_cdf

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class WienerPhase:
    """Drift and squared diffusion coefficient of one regime."""

    mu: float
    sigma2: float

    def __post_init__(self):
        for name in ("mu", "sigma2"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float, np.floating)) and math.isfinite(v) and v > 0):
                raise ValueError(f"WienerPhase.{name} must be a finite positive number, got {v!r}")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    def fpt_mean(self, boundary: float) -> float:
        return boundary / self.mu

    def fpt_shape(self, boundary: float) -> float:
        return boundary**2 / self.sigma2


@dataclass(frozen=True)
class Model:
    """Boundary plus the pre- and post-intervention phases (start fixed at 0)."""

    boundary: float
    phase1: WienerPhase
    phase2: WienerPhase

    def __post_init__(self):
        b = self.boundary
        if not (isinstance(b, (int, float, np.floating)) and math.isfinite(b) and b > 0):
            raise ValueError(f"Model.boundary must be a finite positive number, got {b!r}")
        object.__setattr__(self, "boundary", float(b))

    @classmethod
    def from_values(cls, boundary, mu1, sigma1sq, mu2, sigma2sq) -> "Model":
        return cls(boundary, WienerPhase(mu1, sigma1sq), WienerPhase(mu2, sigma2sq))

    @classmethod
    def proportional(cls, boundary, mu1, mu2, k) -> "Model":
        """Model with ``sigma_i^2 = k * mu_i``."""
        return cls.from_values(boundary, mu1, k * mu1, mu2, k * mu2)

    @property
    def values(self) -> tuple[float, float, float, float]:
        """``(mu1, sigma1sq, mu2, sigma2sq)``."""
        return (self.phase1.mu, self.phase1.sigma2, self.phase2.mu, self.phase2.sigma2)

    def with_values(self, **changes) -> "Model":
        v = dict(zip(("mu1", "sigma1sq", "mu2", "sigma2sq"), self.values))
        unknown = set(changes) - set(v)
        if unknown:
            raise KeyError(f"unknown model parameters: {sorted(unknown)}")
        v.update(changes)
        return Model.from_values(self.boundary, **v)

    @cached_property
    def proportionality(self) -> float | None:
        """``k`` when both phases satisfy ``sigma2 = k * mu`` (to 1e-12), else None."""
        k1 = self.phase1.sigma2 / self.phase1.mu
        k2 = self.phase2.sigma2 / self.phase2.mu
        return k1 if abs(k1 - k2) <= 1e-12 * max(k1, k2) else None


class Scenario(str, enum.Enum):
    """Parameter constraint used when fitting.

    ``NO_EFFECT`` is the two-parameter null model of the equal-drift test
    (``mu1 = mu2``, shared variance); it is not offered on the command line.
    """

    UNCONSTRAINED = "free"
    EQUAL_VARIANCE = "eqvar"
    PROPORTIONAL_VARIANCE = "propvar"
    NO_EFFECT = "null"

    @property
    def param_names(self) -> tuple[str, ...]:
        return _PARAM_NAMES[self]

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def expand(self, params) -> tuple[float, float, float, float]:
        """Map a scenario parameter vector to ``(mu1, sigma1sq, mu2, sigma2sq)``."""
        p = [float(v) for v in params]
        if len(p) != self.dim:
            raise ValueError(f"{self.name} takes {self.dim} parameters, got {len(p)}")
        if self is Scenario.UNCONSTRAINED:
            return tuple(p)
        if self is Scenario.EQUAL_VARIANCE:
            mu1, mu2, s2 = p
            return (mu1, s2, mu2, s2)
        if self is Scenario.PROPORTIONAL_VARIANCE:
            mu1, mu2, k = p
            return (mu1, k * mu1, mu2, k * mu2)
        mu, s2 = p
        return (mu, s2, mu, s2)

    def to_model(self, params, boundary: float) -> Model:
        return Model.from_values(boundary, *self.expand(params))

    def truth(self, model: Model) -> np.ndarray:
        """Scenario parameter vector of ``model``; raises if the constraint fails."""
        mu1, s1, mu2, s2 = model.values
        if self is Scenario.UNCONSTRAINED:
            return np.array([mu1, s1, mu2, s2])
        if self is Scenario.EQUAL_VARIANCE:
            if not math.isclose(s1, s2, rel_tol=1e-12):
                raise ValueError("model does not have equal variances")
            return np.array([mu1, mu2, s1])
        if self is Scenario.PROPORTIONAL_VARIANCE:
            k = model.proportionality
            if k is None:
                raise ValueError("model variances are not proportional to the drifts")
            return np.array([mu1, mu2, k])
        if not (math.isclose(mu1, mu2, rel_tol=1e-12) and math.isclose(s1, s2, rel_tol=1e-12)):
            raise ValueError("model phases differ")
        return np.array([mu1, s1])


_PARAM_NAMES = {
    Scenario.UNCONSTRAINED: ("mu1", "sigma1sq", "mu2", "sigma2sq"),
    Scenario.EQUAL_VARIANCE: ("mu1", "mu2", "sigma2"),
    Scenario.PROPORTIONAL_VARIANCE: ("mu1", "mu2", "k"),
    Scenario.NO_EFFECT: ("mu", "sigma2"),
}


@dataclass(frozen=True)
class ObservationPair:
    s: float
    r: float

    def __post_init__(self):
        if not (math.isfinite(self.s) and math.isfinite(self.r) and self.s > 0 and self.r > 0):
            raise ValueError(f"observation must have s > 0 and r > 0, got ({self.s}, {self.r})")


# ---------------------------------------------------------------------------
# array kernels


def _out(x):
    return x[()] if isinstance(x, np.ndarray) and x.ndim == 0 else x


def log_survival(s, mu, sigma2, B):
    """log P(T > s) for T the first passage of drift ``mu`` through ``B``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        sd = np.sqrt(sigma2 * s)
        la = log_normal_cdf((B - mu * s) / sd)
        lb = 2.0 * mu * B / sigma2 + log_normal_cdf((-B - mu * s) / sd)
        out = la + log1mexp(lb - la)
    out = np.where(s <= 0, 0.0, out)
    return _out(out)


def log_ig_pdf(t, mean, shape):
    """log density of IG(mean, shape) (zero density maps to -inf)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = 0.5 * (np.log(shape) - LOG_2PI - 3.0 * np.log(t)) - shape * (t - mean) ** 2 / (2.0 * mean**2 * t)
    out = np.where(t > 0, out, -np.inf)
    return _out(out)


def log_pdf_S(s, mu1, sigma1sq, B):
    return _out(np.log(mu1 / B) + np.asarray(log_survival(s, mu1, sigma1sq, B)))


def log_absorbed_cdf(x, s, mu1, sigma1sq, B):
    """log P(X(0) < x, T > s) for a path started at 0 a time ``s`` earlier."""
    x = np.asarray(x, dtype=float)
    sd = np.sqrt(sigma1sq * s)
    with np.errstate(divide="ignore", invalid="ignore"):
        la = log_normal_cdf((x - mu1 * s) / sd)
        lb = 2.0 * mu1 * B / sigma1sq + log_normal_cdf((x - 2.0 * B - mu1 * s) / sd)
        out = la + log1mexp(np.minimum(lb - la, 0.0))
    return _out(np.where(x >= B, log_survival(s, mu1, sigma1sq, B), out))


def log_absorbed_pdf(x, s, mu1, sigma1sq, B):
    """log of the absorbed sub-density of X(0) at ``x`` given start 0 at time ``-s``."""
    x = np.asarray(x, dtype=float)
    v = sigma1sq * s
    with np.errstate(divide="ignore", invalid="ignore"):
        free = -0.5 * (LOG_2PI + np.log(v)) - (x - mu1 * s) ** 2 / (2.0 * v)
        out = free + log1mexp(2.0 * B * (x - B) / v)
    return _out(np.where(x < B, out, -np.inf))


def _mills_lower(z):
    """``Phi(z) / phi(z)`` for ``z <= 0`` via the scaled complementary error function."""
    return math.sqrt(math.pi / 2.0) * _special.erfcx(-z / math.sqrt(2.0))


def _erfcx_ratio(z):
    """``z * Phi(z) / phi(z)`` for ``z <= 0``."""
    return z * _mills_lower(z)


def log_pdf_joint(s, r, mu1, sigma1sq, mu2, sigma2sq, B):
    """log of the joint density of (S, R) for the general two-phase Wiener model."""
    s = np.asarray(s, dtype=float)
    r = np.asarray(r, dtype=float)
    s, r = np.broadcast_arrays(s, r)
    sig1 = math.sqrt(sigma1sq)
    sig2 = math.sqrt(sigma2sq)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        V = sigma1sq * s + sigma2sq * r
        gap = B - mu1 * s - mu2 * r
        lpref = math.log(mu1 / B) - 0.5 * LOG_2PI - 1.5 * np.log(V) - gap**2 / (2.0 * V)
        slope = mu2 * sigma1sq - mu1 * sigma2sq
        A1 = B * sigma2sq + s * slope
        A2 = -B * sigma2sq + s * slope
        kappa = np.sqrt(r) / (sig1 * sig2 * np.sqrt(s * V))
        z1 = kappa * A1
        z2 = kappa * A2
        # The exponential factor multiplying the second Phi term equals
        # (z2^2 - z1^2) / 2, so exp(E) Phi(z2) = phi(z1) * Phi(z2)/phi(z2);
        # using the ratio form avoids adding two huge exponents when sigma1
        # or s is small.
        log_phi1 = -0.5 * (LOG_2PI + z1**2)
        l1 = np.log(np.abs(A1)) + log_normal_cdf(z1)
        l2_neg = np.log(np.abs(A2)) + log_phi1 + np.log(_mills_lower(np.minimum(z2, 0.0)))
        l2_pos = 0.5 * (z2 - z1) * (z2 + z1) + np.log(np.abs(A2)) + log_normal_cdf(z2)
        pos_pos = A2 >= 0
        both = np.where(
            pos_pos,
            l1 + log1mexp(np.minimum(l2_pos - l1, 0.0)),
            np.logaddexp(l1, l2_neg),
        )
        # z1 < 0: both Phi terms are deep in the lower tail and their leading
        # Gaussian factors coincide; factor phi(z1)/kappa out and difference
        # z*Phi(z)/phi(z), which is bounded there.
        neg = z1 < 0
        if np.any(neg):
            z1n = np.where(neg, z1, -1.0)
            z2n = np.where(neg, z2, -2.0)
            diff = _erfcx_ratio(z1n) - _erfcx_ratio(z2n)
            ltail = -0.5 * (LOG_2PI + z1n**2) - np.log(kappa) + np.log(diff)
            both = np.where(neg, ltail, both)
        out = lpref + both

        # continuous extension at the edges of the quadrant
        at_s0 = (s == 0) & (r > 0)
        if np.any(at_s0):
            edge = math.log(mu1 / B) + log_ig_pdf(np.where(at_s0, r, 1.0), B / mu2, B**2 / sigma2sq)
            out = np.where(at_s0, edge, out)
        at_r0 = (r == 0) & (s > 0)
        if np.any(at_r0):
            ss = np.where(at_r0, s, 1.0)
            v0 = sigma1sq * ss
            edge = (math.log(mu1 * sigma2sq) - 0.5 * LOG_2PI - 1.5 * np.log(v0)
                    - (B - mu1 * ss) ** 2 / (2.0 * v0))
            out = np.where(at_r0, edge, out)
        out = np.where((s == 0) & (r == 0), -np.inf, out)
        out = np.where((s < 0) | (r < 0), -np.inf, out)
    return _out(out)


def log_pdf_joint_prop(s, r, mu1, mu2, k, B):
    """log joint density when ``sigma_i^2 = k mu_i``: ``(mu1 mu2 / B) f_IG(B, B^2/k)(mu1 s + mu2 r)``."""
    t = mu1 * np.asarray(s, dtype=float) + mu2 * np.asarray(r, dtype=float)
    return _out(math.log(mu1 * mu2 / B) + np.asarray(log_ig_pdf(t, B, B**2 / k)))


def pdf_R_values(r, mu1, sigma1sq, mu2, sigma2sq, B):
    """Marginal density of R from the closed form (array kernel)."""
    r = np.asarray(r, dtype=float)
    sig2 = math.sqrt(sigma2sq)
    c = 2.0 * mu1 * B / sigma1sq
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        sr = np.sqrt(r)
        la = log_normal_cdf((B - mu2 * r) / (sig2 * sr))
        lb = log_normal_cdf(-mu2 * sr / sig2)
        term1 = (mu2 / B) * np.exp(la + log1mexp(np.minimum(lb - la, 0.0)))

        coef = (mu2 * sigma1sq - 2.0 * mu1 * sigma2sq) / (B * sigma1sq)
        ER = 2.0 * mu1 * r * (mu1 * sigma2sq - mu2 * sigma1sq) / sigma1sq**2
        w = r * (2.0 * mu1 * sigma2sq - mu2 * sigma1sq)
        w1 = (B * sigma1sq + w) / (sigma1sq * sig2 * sr)
        w2 = w / (sigma1sq * sig2 * sr)
        term2 = coef * (np.exp(ER + c + log_normal_cdf(-w1)) - np.exp(ER + log_normal_cdf(-w2)))
        out = term1 + term2
    # r -> 0+: term1 -> mu2/(2B), the bracket of term2 -> -1/2
    edge = mu1 * sigma2sq / (B * sigma1sq)
    out = np.where(r == 0, edge, out)
    out = np.where(r < 0, 0.0, np.maximum(out, 0.0))
    return _out(out)


# ---------------------------------------------------------------------------
# public wrappers


def survival_T(s, phase: WienerPhase, B: float):
    """P(T > s) for T ~ IG(B/mu, B^2/sigma2)."""
    return _out(np.exp(log_survival(s, phase.mu, phase.sigma2, B)))


def pdf_S(s, phase1: WienerPhase, B: float):
    """Density of the backward recurrence time S: ``survival_T(s) * mu1 / B``."""
    return _out(np.exp(log_pdf_S(s, phase1.mu, phase1.sigma2, B)))


def moments_S(phase1: WienerPhase, B: float) -> tuple[float, float, float]:
    """``(mean, variance, cv)`` of S."""
    mu, v = phase1.mu, phase1.sigma2
    mean = (B * mu + v) / (2.0 * mu**2)
    var = ((B * mu + 3.0 * v) / (2.0 * mu**2)) ** 2 / 3.0
    cv = (B * mu + 3.0 * v) / (math.sqrt(3.0) * (B * mu + v))
    return mean, var, cv


def pdf_X0_absorbed(x, s, phase1: WienerPhase, B: float):
    """Sub-density of X(0) among paths that have not hit B within time ``s``."""
    return _out(np.exp(log_absorbed_pdf(x, s, phase1.mu, phase1.sigma2, B)))


def cdf_X0_absorbed(x, s, phase1: WienerPhase, B: float):
    return _out(np.exp(log_absorbed_cdf(x, s, phase1.mu, phase1.sigma2, B)))


def pdf_X0(x, phase1: WienerPhase, B: float):
    """Unconditional density of the position at the intervention."""
    x = np.asarray(x, dtype=float)
    mu, v = phase1.mu, phase1.sigma2
    with np.errstate(over="ignore"):
        out = (np.exp(mu * (x - np.abs(x)) / v) - np.exp(2.0 * mu * (x - B) / v)) / B
    return _out(np.where(x < B, out, 0.0))


def moments_X0(phase1: WienerPhase, B: float) -> tuple[float, float]:
    mu, v = phase1.mu, phase1.sigma2
    return (B * mu - v) / (2.0 * mu), (B**2 * mu**2 + 3.0 * v**2) / (12.0 * mu**2)


def pdf_R(r, model: Model):
    """Marginal density of R."""
    return pdf_R_values(r, *model.values, model.boundary)


def pdf_joint_SR(s, r, model: Model):
    """Joint density of (S, R); zero-length edges use the continuous extension."""
    return _out(np.exp(log_pdf_joint(s, r, *model.values, model.boundary)))


def pdf_joint_SR_proportional(s, r, mu1, mu2, k, B):
    return _out(np.exp(log_pdf_joint_prop(s, r, mu1, mu2, k, B)))


@dataclass(frozen=True)
class Summaries:
    mean_S: float
    var_S: float
    cv_S: float
    mean_R: float
    var_R: float
    cv_R: float
    cov_SR: float
    corr_SR: float


def special_case_summaries(mu1, mu2, k, B) -> Summaries:
    """Closed-form moments of (S, R) when ``sigma_i^2 = k mu_i``."""
    if min(mu1, mu2, k, B) <= 0:
        raise ValueError("all arguments must be positive")
    cv = (B + 3.0 * k) / (math.sqrt(3.0) * (B + k))
    return Summaries(
        mean_S=(B + k) / (2.0 * mu1),
        var_S=(B + 3.0 * k) ** 2 / (12.0 * mu1**2),
        cv_S=cv,
        mean_R=(B + k) / (2.0 * mu2),
        var_R=(B + 3.0 * k) ** 2 / (12.0 * mu2**2),
        cv_R=cv,
        cov_SR=(3.0 * k**2 - B**2) / (12.0 * mu1 * mu2),
        corr_SR=(3.0 * k**2 - B**2) / (B + 3.0 * k) ** 2,
    )


# ---------------------------------------------------------------------------
# integration limits and numerical moments


def s_upper_limit(phase1: WienerPhase, B: float) -> float:
    """Point where the survival envelope of S falls below 1e-14 of its peak (1 at s=0)."""
    mu, v = phase1.mu, phase1.sigma2
    start = B / mu
    return numerics.tail_bound(lambda t: float(log_survival(t, mu, v, B)), start)


def r_upper_limit(model: Model) -> float:
    """Point beyond which the density of R is below 1e-14 of its peak."""
    mu1, s1, mu2, s2 = model.values
    B = model.boundary
    mx, vx = moments_X0(model.phase1, B)
    grid = np.linspace(1e-6, 4.0 * (B - mx + 3.0 * math.sqrt(vx)) / mu2, 400)
    vals = pdf_R_values(grid, mu1, s1, mu2, s2, B)
    start = float(grid[int(np.argmax(vals))])
    return numerics.tail_bound(
        lambda t: math.log(max(float(pdf_R_values(t, mu1, s1, mu2, s2, B)), 1e-320)),
        max(start, 1e-3),
    )


def x0_lower_limit(phase1: WienerPhase, B: float) -> float:
    """Point below which the density of X(0) is under 1e-14 of its value at 0."""
    return math.log(1e-14) * phase1.sigma2 / (2.0 * phase1.mu)


def numerical_summaries(model: Model, rel_tol: float = 1e-5) -> Summaries:
    """Moments of (S, R) by quadrature; no closed form exists outside the proportional case.

    Marginal moments of R integrate the closed-form density of R; the cross
    moment ``E[SR]`` is a nested quadrature of the joint density.
    """
    B = model.boundary
    mu1, s1, mu2, s2 = model.values
    mean_S, var_S, cv_S = moments_S(model.phase1, B)
    r_hi = r_upper_limit(model)
    inner_tol = min(rel_tol * 1e-2, 1e-7)
    m1 = numerics.integrate(lambda r: r * float(pdf_R_values(r, mu1, s1, mu2, s2, B)), 0.0, r_hi, inner_tol)
    m2 = numerics.integrate(lambda r: r * r * float(pdf_R_values(r, mu1, s1, mu2, s2, B)), 0.0, r_hi, inner_tol)
    mean_R = m1
    var_R = m2 - m1**2
    s_hi = s_upper_limit(model.phase1, B)

    def inner(s):
        hint = (B - min(mu1 * s, 0.9 * B)) / mu2
        return s * numerics.integrate(
            lambda r: r * math.exp(float(log_pdf_joint(s, r, mu1, s1, mu2, s2, B))),
            0.0, r_hi, inner_tol, points=[hint],
        )

    e_sr = numerics.integrate(inner, 0.0, s_hi, rel_tol, points=[mean_S])
    cov = e_sr - mean_S * mean_R
    return Summaries(
        mean_S=mean_S, var_S=var_S, cv_S=cv_S,
        mean_R=mean_R, var_R=var_R, cv_R=math.sqrt(var_R) / mean_R,
        cov_SR=cov, corr_SR=cov / math.sqrt(var_S * var_R),
    )
