"""Maximum likelihood fitting, asymptotic standard errors and the equal-drift test."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np
from scipy import optimize

from . import _kernels, numerics
from .errors import DegenerateSample, InfeasibleStart, NonFinite, NotPositiveDefinite, OptimFailure
from .model import ObservationPair, Scenario, log_pdf_joint, log_pdf_joint_prop, log_pdf_S

log = logging.getLogger(__name__)

Z95 = 1.96
LRT_THRESHOLD = 3.84
RESTART_TOL = 1e-6
MAX_RESTARTS = 10
NM_FATOL = 1e-8
NM_XATOL = 1e-8
NM_MAXFEV = 20_000
SIMPLEX_STEP = 0.1
DEGENERATE_VARIANCE = 1e-6


@dataclass(frozen=True)
class Sample:
    """``n`` observed (s, r) pairs stored as two float arrays."""

    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.s, dtype=float).ravel()
        r = np.ascontiguousarray(self.r, dtype=float).ravel()
        if s.shape != r.shape:
            raise ValueError(f"s and r lengths differ ({s.size} vs {r.size})")
        if s.size < 1:
            raise ValueError("a sample needs at least one pair")
        bad = ~(np.isfinite(s) & np.isfinite(r) & (s > 0) & (r > 0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"pair {i} = ({s[i]}, {r[i]}) is not strictly positive and finite")
        s.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_pairs(cls, pairs: Iterable[ObservationPair]) -> "Sample":
        pairs = list(pairs)
        return cls(np.array([p.s for p in pairs]), np.array([p.r for p in pairs]))

    @property
    def n(self) -> int:
        return int(self.s.size)

    @property
    def pairs(self) -> list[ObservationPair]:
        return [ObservationPair(float(a), float(b)) for a, b in zip(self.s, self.r)]

    def __len__(self):
        return self.n

    def concat(self, other: "Sample") -> "Sample":
        return Sample(np.concatenate([self.s, other.s]), np.concatenate([self.r, other.r]))


@dataclass
class FitResult:
    """Outcome of one likelihood maximisation.

    ``observed_info`` is the Hessian of the total negative log-likelihood at
    the estimate, so ``se = sqrt(diag(observed_info^-1))`` directly.
    """

    scenario: Scenario | None
    param_names: tuple[str, ...]
    estimate: np.ndarray
    loglik: float
    start: np.ndarray
    observed_info: np.ndarray | None = None
    se: np.ndarray | None = None
    ci95: np.ndarray | None = None
    converged: bool = False
    restarts_used: int = 0
    n_evals: int = 0
    message: str = ""

    def as_dict(self) -> dict:
        d = {
            "scenario": None if self.scenario is None else self.scenario.value,
            "params": list(self.param_names),
            "estimate": dict(zip(self.param_names, map(float, self.estimate))),
            "se": None if self.se is None else dict(zip(self.param_names, map(float, self.se))),
            "ci95": None if self.ci95 is None else {
                k: [float(lo), float(hi)] for k, (lo, hi) in zip(self.param_names, self.ci95)
            },
            "loglik": float(self.loglik),
            "converged": bool(self.converged),
            "restarts_used": int(self.restarts_used),
        }
        if self.message:
            d["message"] = self.message
        return d


@dataclass
class LrtResult:
    statistic: float
    reject: bool
    null_fit: FitResult
    full_fit: FitResult
    threshold: float = LRT_THRESHOLD

    def as_dict(self) -> dict:
        return {
            "statistic": float(self.statistic),
            "threshold": self.threshold,
            "reject": bool(self.reject),
            "null_fit": self.null_fit.as_dict(),
            "full_fit": self.full_fit.as_dict(),
        }


# ---------------------------------------------------------------------------
# likelihoods


def _log_density(sample: Sample, params, scenario: Scenario, B: float) -> np.ndarray:
    if scenario is Scenario.PROPORTIONAL_VARIANCE:
        mu1, mu2, k = (float(v) for v in params)
        return log_pdf_joint_prop(sample.s, sample.r, mu1, mu2, k, B)
    return log_pdf_joint(sample.s, sample.r, *scenario.expand(params), B)


def loglik(sample: Sample, params, scenario: Scenario, B: float) -> float:
    """Sum of log joint densities over the sample.

    Raises NonFinite when any pair has zero or non-finite density under
    ``params``.
    """
    params = np.asarray(params, dtype=float)
    if params.shape != (scenario.dim,):
        raise ValueError(f"{scenario.name} expects {scenario.dim} parameters, got shape {params.shape}")
    if np.any(~np.isfinite(params)) or np.any(params <= 0):
        raise ValueError(f"parameters must be finite and positive, got {params}")
    ld = _log_density(sample, params, scenario, B)
    if not np.all(np.isfinite(ld)):
        bad = int(np.flatnonzero(~np.isfinite(ld))[0])
        raise NonFinite(f"density of pair {bad} is zero or non-finite at {params}")
    return float(ld.sum())


def loglik_s_only(s, mu1: float, sigma1sq: float, B: float) -> float:
    ld = log_pdf_S(np.asarray(s, dtype=float), mu1, sigma1sq, B)
    if not np.all(np.isfinite(ld)):
        raise NonFinite("S density is zero or non-finite")
    return float(np.sum(ld))


def _safe_nll(fn: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], float]:
    """Negative summed log density; +inf where the density vanishes."""

    def nll(params):
        if np.any(params <= 0) or not np.all(np.isfinite(params)):
            return math.inf
        with np.errstate(all="ignore"):
            ld = fn(params)
        total = float(np.sum(ld))
        return -total if math.isfinite(total) else math.inf

    return nll


def _joint_nll(sample: Sample, scenario: Scenario, B: float):
    # compiled sums for the optimiser; ``loglik`` keeps the array form
    s, r = sample.s, sample.r
    if scenario is Scenario.PROPORTIONAL_VARIANCE:
        return _safe_nll(lambda p: _log_density(sample, p, scenario, B))
    return _safe_nll(lambda p: _kernels.joint_loglik(s, r, *scenario.expand(p), B))


def _s_only_nll(s: np.ndarray, B: float, proportional: bool = False):
    if proportional:
        return _safe_nll(lambda p: _kernels.s_loglik(s, p[0], p[1] * p[0], B))
    return _safe_nll(lambda p: _kernels.s_loglik(s, p[0], p[1], B))


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class _Optimum:
    x: np.ndarray
    fun: float
    restarts: int
    n_evals: int
    messages: list[str] = field(default_factory=list)


def _maximise(nll: Callable[[np.ndarray], float], x0: np.ndarray) -> _Optimum:
    """Minimise ``nll`` over positive vectors by Nelder-Mead in log coordinates.

    Relaunches from each optimum until two consecutive optima differ by
    less than ``RESTART_TOL`` in objective.
    """
    x0 = np.asarray(x0, dtype=float)
    if np.any(x0 <= 0) or not np.all(np.isfinite(x0)):
        raise OptimFailure(f"starting value must be positive and finite, got {x0}")
    f_log = lambda th: nll(np.exp(th))  # noqa: E731
    theta = np.log(x0)
    f_prev = f_log(theta)
    if not math.isfinite(f_prev):
        raise OptimFailure(f"objective is not finite at the starting value {x0}")
    d = theta.size
    evals = 1
    msgs = []
    for attempt in range(MAX_RESTARTS + 1):
        simplex = np.vstack([theta, theta + SIMPLEX_STEP * np.eye(d)])
        res = optimize.minimize(
            f_log, theta, method="Nelder-Mead",
            options=dict(initial_simplex=simplex, xatol=NM_XATOL, fatol=NM_FATOL,
                         maxfev=NM_MAXFEV, adaptive=d > 2),
        )
        evals += res.nfev
        if not res.success:
            msgs.append(res.message)
        improved = f_prev - res.fun
        if res.fun <= f_prev:
            theta, f_prev = res.x, res.fun
        if abs(improved) < RESTART_TOL:
            return _Optimum(np.exp(theta), f_prev, attempt, evals, msgs)
    raise OptimFailure(f"objective still moving after {MAX_RESTARTS} restarts (last change {improved:.3g})")


def _information(nll: Callable[[np.ndarray], float], x: np.ndarray):
    """Observed information and standard errors; ``(H, None)`` if H is not SPD."""
    H = numerics.numeric_hessian(nll, x)
    try:
        cov = numerics.spd_inverse(H)
    except NotPositiveDefinite:
        return H, None
    return H, np.sqrt(np.diag(cov))


def _finish(scenario, names, opt: _Optimum, start, nll) -> FitResult:
    result = FitResult(
        scenario=scenario, param_names=names, estimate=opt.x, loglik=-opt.fun,
        start=np.asarray(start, dtype=float), restarts_used=opt.restarts, n_evals=opt.n_evals,
    )
    try:
        H, se = _information(nll, opt.x)
    except NonFinite as exc:
        result.message = f"Hessian evaluation failed: {exc}"
        return result
    result.observed_info = H
    if se is None:
        result.message = "observed information is not positive definite"
        return result
    result.se = se
    result.ci95 = np.column_stack([opt.x - Z95 * se, opt.x + Z95 * se])
    result.converged = True
    return result


# ---------------------------------------------------------------------------
# starting values


def moment_start_s(s: np.ndarray, B: float) -> tuple[float, float]:
    """Closed-form ``(mu1, sigma1sq)`` matching the sample mean and SD of S."""
    m = float(np.mean(s))
    sd = float(np.std(s, ddof=1))
    denom = 3.0 * m - math.sqrt(3.0) * sd
    if denom > 0:
        mu = B / denom
    else:
        mu = B / (2.0 * m)
    v = 2.0 * mu * mu * m - B * mu
    if v <= 0:
        v = 0.04 * B * mu
    return mu, v


def moment_start_s_prop(s: np.ndarray, B: float) -> tuple[float, float]:
    """``(mu1, k)`` from the sample mean and CV of S under ``sigma^2 = k mu``."""
    m = float(np.mean(s))
    cv = float(np.std(s, ddof=1)) / m
    a = math.sqrt(3.0) * cv
    k = B * (a - 1.0) / (3.0 - a) if 1.0 < a < 3.0 else 0.0
    if k <= 0:
        k = 0.04 * B
    return (B + k) / (2.0 * m), k


def _check_spread(sample: Sample):
    if sample.n < 3:
        raise ValueError(f"starting values need n >= 3, got {sample.n}")
    if np.var(sample.s) == 0.0 or np.var(sample.r) == 0.0:
        raise DegenerateSample("S or R has zero empirical variance")


def _s_only_optimum(s: np.ndarray, B: float, proportional: bool = False) -> _Optimum:
    start = moment_start_s_prop(s, B) if proportional else moment_start_s(s, B)
    return _maximise(_s_only_nll(s, B, proportional), np.array(start))


def starting_values(sample: Sample, scenario: Scenario, B: float) -> np.ndarray:
    """Starting vector: S-only fit for phase 1, then moment matching of R."""
    _check_spread(sample)
    r_bar = float(np.mean(sample.r))
    if scenario is Scenario.PROPORTIONAL_VARIANCE:
        mu1, k = _s_only_optimum(sample.s, B, proportional=True).x
        return np.array([mu1, (B + k) / (2.0 * r_bar), k])
    mu1, v1 = _s_only_optimum(sample.s, B).x
    if v1 < DEGENERATE_VARIANCE * B * mu1:
        # S alone can favour the sigma1sq -> 0 (uniform) limit; that start
        # strands the joint search on a flat ridge, the moment start does not.
        mu1, v1 = moment_start_s(sample.s, B)
    if scenario is Scenario.NO_EFFECT:
        return np.array([mu1, v1])
    x_hat = (B * mu1 - v1) / (2.0 * mu1)
    if x_hat >= B:
        warnings.warn(f"estimated X(0)={x_hat:.4g} >= B; using B/2", InfeasibleStart, stacklevel=2)
        x_hat = B / 2.0
    gap = B - x_hat
    mu2 = gap / r_bar
    v2 = float(np.var(sample.r, ddof=1)) * mu2**3 / gap
    if scenario is Scenario.EQUAL_VARIANCE:
        return np.array([mu1, mu2, v1])
    return np.array([mu1, v1, mu2, v2])


# ---------------------------------------------------------------------------
# public fitting API


def fit(sample: Sample, scenario: Scenario, B: float, start=None) -> FitResult:
    """Maximum likelihood estimate under ``scenario`` with asymptotic SEs and 95% CIs.

    If the observed information is not positive definite the result comes
    back with ``converged=False`` and no SEs.
    """
    scenario = Scenario(scenario)
    if sample.n < scenario.dim + 1:
        raise ValueError(f"{scenario.name} needs n >= {scenario.dim + 1}, got {sample.n}")
    x0 = starting_values(sample, scenario, B) if start is None else np.asarray(start, dtype=float)
    nll = _joint_nll(sample, scenario, B)
    opt = _maximise(nll, x0)
    return _finish(scenario, scenario.param_names, opt, x0, nll)


def fit_s_only(sample: Sample, B: float) -> FitResult:
    """Fit ``(mu1, sigma1sq)`` from the S observations alone."""
    s = sample.s
    if s.size < 3:
        raise ValueError(f"S-only fit needs n >= 3, got {s.size}")
    if np.var(s) == 0.0:
        raise DegenerateSample("S has zero empirical variance")
    x0 = np.array(moment_start_s(s, B))
    nll = _s_only_nll(s, B)
    opt = _maximise(nll, x0)
    return _finish(None, ("mu1", "sigma1sq"), opt, x0, nll)


def confidence_report(fit_result: FitResult, n: int) -> dict[str, dict[str, float]]:
    """Per-parameter SE and 95% CI from the observed information.

    The per-observation information is ``observed_info / n`` and
    ``SE_i = sqrt(info^-1_ii / n)``.
    """
    if fit_result.observed_info is None:
        raise NotPositiveDefinite("fit has no observed information")
    per_obs = fit_result.observed_info / n
    se = np.sqrt(np.diag(numerics.spd_inverse(per_obs)) / n)
    est = fit_result.estimate
    return {
        name: {"estimate": float(e), "se": float(v), "ci_low": float(e - Z95 * v), "ci_high": float(e + Z95 * v)}
        for name, e, v in zip(fit_result.param_names, est, se)
    }


def lrt_equal_drift(sample: Sample, B: float, full_fit: FitResult | None = None) -> LrtResult:
    """Likelihood ratio test of ``mu1 = mu2`` with a shared variance.

    The alternative is the equal-variance fit; when its maximum falls below
    the null maximum it is refitted from the null estimate embedded as
    ``(mu, mu, sigma2)``, so the statistic reflects nested maxima.
    """
    if sample.n < 4:
        raise ValueError(f"the test needs n >= 4, got {sample.n}")
    null = fit(sample, Scenario.NO_EFFECT, B)
    full = full_fit if full_fit is not None else fit(sample, Scenario.EQUAL_VARIANCE, B)
    if full.loglik < null.loglik:
        mu, v = null.estimate
        refit = fit(sample, Scenario.EQUAL_VARIANCE, B, start=[mu, mu, v])
        if refit.loglik > full.loglik:
            full = refit
    stat = 2.0 * (full.loglik - null.loglik)
    if stat < -1e-8:
        log.warning("negative likelihood ratio statistic %.3g clamped to 0", stat)
    stat = max(stat, 0.0)
    return LrtResult(statistic=stat, reject=stat > LRT_THRESHOLD, null_fit=null, full_fit=full)
