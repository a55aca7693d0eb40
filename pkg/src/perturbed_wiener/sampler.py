"""Exact simulation of (S, X(0), R) and a discretised-path oracle.

The exact sampler inverts the CDF of S (built by quadrature), then the
conditional CDF of the position at the intervention, and finally draws R
from the inverse Gaussian first-passage law of the second phase.

The oracle never touches a closed form: it runs Euler-Maruyama renewal
cycles of the first phase, inspects them at a uniformly placed time and
continues the path under the second phase until it reaches the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numba
import numpy as np

from . import numerics
from .errors import HorizonTooShort
from .model import (
    Model, ObservationPair, WienerPhase, log_absorbed_cdf, log_absorbed_pdf,
    log_pdf_S, moments_S, s_upper_limit,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
CDF_CELLS = 512


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Distinct stream ids are spawned children of the same ``SeedSequence``
    and therefore statistically independent.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (isinstance(v, (int, np.integer)) and 0 <= v < 2**64):
                raise ValueError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream_id),))
        return np.random.Generator(np.random.PCG64(ss))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def sample_ig(mean, shape, rng, size=None):
    """Inverse Gaussian draws by the chi-square transformation with a uniform acceptance branch.

    ``mean`` and ``shape`` broadcast against ``size``.  The smaller root of
    the quadratic is formed as ``mean / (1 + z/2 + sqrt(z + z^2/4))`` to avoid
    cancellation when ``shape`` is large.
    """
    rng = _as_generator(rng)
    mean = np.asarray(mean, dtype=float)
    shape = np.asarray(shape, dtype=float)
    if np.any(mean <= 0) or np.any(shape <= 0):
        raise ValueError("inverse Gaussian mean and shape must be positive")
    if size is None:
        size = np.broadcast(mean, shape).shape
    y = rng.standard_normal(size) ** 2
    u = rng.random(size)
    z = mean * y / shape
    x = mean / (1.0 + 0.5 * z + np.sqrt(z + 0.25 * z * z))
    out = np.where(u <= mean / (mean + x), x, mean * mean / x)
    return out[()] if out.ndim == 0 else out


class SCdf:
    """CDF of S on a memoised quadrature grid, with vectorised inversion."""

    def __init__(self, phase1: WienerPhase, B: float, cells: int = CDF_CELLS):
        self.mu = phase1.mu
        self.sigma2 = phase1.sigma2
        self.B = float(B)
        self.upper = s_upper_limit(phase1, B)
        self.grid = np.linspace(0.0, self.upper, cells + 1)
        pieces = [
            numerics.integrate(self.pdf, a, b, 1e-10)
            for a, b in zip(self.grid[:-1], self.grid[1:])
        ]
        self.cum = np.concatenate(([0.0], np.cumsum(pieces)))

    def pdf(self, s):
        return np.exp(log_pdf_S(s, self.mu, self.sigma2, self.B))

    def __call__(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.upper)
        j = np.clip(np.searchsorted(self.grid, s, side="right") - 1, 0, self.grid.size - 2)
        a = self.grid[j]
        half = 0.5 * (s - a)
        nodes = (a + half)[..., None] + half[..., None] * _GL_NODES
        out = self.cum[j] + half * (self.pdf(nodes) @ _GL_WEIGHTS)
        return out[()] if out.ndim == 0 else out

    def inverse(self, u):
        """Quantiles of S for uniforms ``u`` (clamped at the truncation point)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        j = np.clip(np.searchsorted(self.cum, u, side="right") - 1, 0, self.grid.size - 2)
        out = numerics.find_roots(
            lambda x, idx: self(x) - u[idx],
            lambda x, idx: self.pdf(x),
            self.grid[j], self.grid[j + 1],
        )
        return np.where(u >= self.cum[-1], self.upper, out)


@lru_cache(maxsize=64)
def s_cdf(mu: float, sigma2: float, B: float) -> SCdf:
    return SCdf(WienerPhase(mu, sigma2), B)


def sample_S(phase1: WienerPhase, B: float, rng) -> float:
    """One draw of S by inverse transform with a geometrically grown bracket."""
    rng = _as_generator(rng)
    F = s_cdf(phase1.mu, phase1.sigma2, float(B))
    u = rng.random()
    hi = 2.0 * moments_S(phase1, B)[0]
    while F(hi) <= u and hi < F.upper:
        hi *= 2.0
    if F(hi) <= u:
        return F.upper
    return numerics.find_root(lambda s: float(F(s)) - u, 0.0, hi)


def sample_S_many(phase1: WienerPhase, B: float, size: int, rng) -> np.ndarray:
    rng = _as_generator(rng)
    F = s_cdf(phase1.mu, phase1.sigma2, float(B))
    return F.inverse(rng.random(size))


def _x0_quantiles(s, u, mu1, sigma1sq, B):
    s = np.atleast_1d(np.asarray(s, dtype=float))
    u = np.broadcast_to(np.asarray(u, dtype=float), s.shape)
    log_u = np.log(u)
    log_surv = np.asarray(log_absorbed_cdf(np.full(s.shape, B), s, mu1, sigma1sq, B))

    def g(x, idx):
        return log_absorbed_cdf(x, s[idx], mu1, sigma1sq, B) - log_surv[idx] - log_u[idx]

    def dg(x, idx):
        si = s[idx]
        return np.exp(log_absorbed_pdf(x, si, mu1, sigma1sq, B) - log_absorbed_cdf(x, si, mu1, sigma1sq, B))

    sd = np.sqrt(sigma1sq * s)
    lo = np.minimum(0.0, mu1 * s - 10.0 * sd)
    idx_all = np.arange(s.size)
    for _ in range(100):
        bad = g(lo, idx_all) >= 0
        if not bad.any():
            break
        lo = np.where(bad, lo - 10.0 * sd, lo)
    return numerics.find_roots(g, dg, lo, np.full(s.shape, float(B)))


def sample_X0_given_S(s, phase1: WienerPhase, B: float, rng):
    """Position at the intervention given S = ``s`` (scalar or array)."""
    rng = _as_generator(rng)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr <= 0):
        raise ValueError("s must be positive")
    x = _x0_quantiles(s_arr, rng.random(s_arr.shape), phase1.mu, phase1.sigma2, float(B))
    return float(x[0]) if np.ndim(s) == 0 else x


def sample_pair(model: Model, rng) -> ObservationPair:
    """One (s, r) draw: S by inversion, then X(0) | S, then R | X(0) ~ IG."""
    rng = _as_generator(rng)
    B = model.boundary
    s = sample_S(model.phase1, B, rng)
    x = sample_X0_given_S(s, model.phase1, B, rng)
    gap = B - x
    r = float(sample_ig(gap / model.phase2.mu, gap**2 / model.phase2.sigma2, rng))
    return ObservationPair(s, r)


def sample_pairs(model: Model, n: int, rng, return_x0: bool = False):
    """``n`` i.i.d. (s, r) draws as two arrays (vectorised form of ``sample_pair``)."""
    rng = _as_generator(rng)
    B = model.boundary
    s = sample_S_many(model.phase1, B, n, rng)
    x = _x0_quantiles(s, rng.random(n), model.phase1.mu, model.phase1.sigma2, B)
    gap = B - x
    r = sample_ig(gap / model.phase2.mu, gap**2 / model.phase2.sigma2, rng, size=n)
    if return_x0:
        return s, r, x
    return s, r


# ---------------------------------------------------------------------------
# path oracle


@dataclass(frozen=True)
class OracleConfig:
    """Euler-Maruyama step and number of renewal cycles simulated before inspection."""

    dt: float = 1e-3
    horizon: int = 64
    max_steps: int = 2_000_000_000

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if int(self.horizon) != self.horizon or self.horizon < 10:
            raise ValueError(f"horizon must be an integer >= 10, got {self.horizon}")

    def check(self, model: Model) -> None:
        mean_t = model.boundary / model.phase1.mu
        if self.dt > 1e-2 * mean_t:
            raise ValueError(f"dt={self.dt} exceeds 1e-2 * E[T] = {1e-2 * mean_t}")


@numba.njit(cache=True)
def _oracle_draws(seeds, mu1, sd1, mu2, sd2, B, dt, horizon, max_steps, out):
    sq = math.sqrt(dt)
    inc1 = mu1 * dt
    inc2 = mu2 * dt
    for i in range(seeds.size):
        np.random.seed(seeds[i])
        x = 0.0
        age = 0          # steps since the current cycle started
        k = 0            # steps simulated so far
        cycles = 0
        next_pick = 1
        kept_age = 0
        kept_x = 0.0
        while cycles < horizon:
            k += 1
            if k == next_pick:
                # reservoir of size one over all steps: uniform step index
                kept_age = age
                kept_x = x
                u = np.random.random()
                while u == 0.0:
                    u = np.random.random()
                next_pick = int(k / u) + 1
            x += inc1 + sd1 * sq * np.random.standard_normal()
            age += 1
            if x >= B:
                cycles += 1
                x = 0.0
                age = 0
            if k >= max_steps:
                out[i, 0] = -1.0
                out[i, 1] = -1.0
                break
        if out[i, 0] < 0.0:
            continue
        w = np.random.random()
        frac = w * dt
        s = kept_age * dt + frac
        x = kept_x + mu1 * frac + sd1 * math.sqrt(frac) * np.random.standard_normal()
        m = 0
        while True:
            m += 1
            x += inc2 + sd2 * sq * np.random.standard_normal()
            if x >= B:
                break
        out[i, 0] = s
        out[i, 1] = m * dt


def oracle_sample_pairs(model: Model, n: int, cfg: OracleConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """``n`` (s, r) pairs from discretised paths (see module docstring).

    Crossings are detected at the first grid point at or above ``B``, with
    no bridge correction, so first-passage times carry an O(sqrt(dt))
    upward bias.  The inspection time is uniform over the span of the
    completed cycles; each draw gets its own seed from ``rng``.
    """
    rng = _as_generator(rng)
    cfg.check(model)
    seeds = rng.integers(0, 2**32 - 1, size=n, dtype=np.int64)
    out = np.zeros((n, 2))
    mu1, s1, mu2, s2 = model.values
    _oracle_draws(seeds, mu1, math.sqrt(s1), mu2, math.sqrt(s2), model.boundary,
                  cfg.dt, int(cfg.horizon), int(cfg.max_steps), out)
    if np.any(out[:, 0] < 0):
        raise HorizonTooShort(
            f"step budget {cfg.max_steps} exhausted before {cfg.horizon} cycles completed"
        )
    return out[:, 0], out[:, 1]


def oracle_sample_pair(model: Model, cfg: OracleConfig, rng) -> ObservationPair:
    s, r = oracle_sample_pairs(model, 1, cfg, rng)
    return ObservationPair(float(s[0]), float(r[0]))
