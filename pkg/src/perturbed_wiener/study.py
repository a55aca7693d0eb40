"""Monte Carlo replication harness: simulate, fit, aggregate.

Each replication ``i`` draws its sample from ``RngStream(seed, i)``, so the
result of a study does not depend on how replications are scheduled over
worker processes.  Aggregation always runs in replication order.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import PerturbedWienerError, StudyFailure
from .inference import Sample, fit, fit_s_only, lrt_equal_drift
from .model import Model, Scenario
from .sampler import RngStream, sample_pairs

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.05
SWEEP_AXES = ("mu1", "mu2", "sigma2", "k")
SUMMARY_FIELDS = ("param", "truth", "avg", "emp_se", "asym_se", "cp")


def default_grid(points: int = 20, lo: float = 0.1, hi: float = 10.0) -> list[float]:
    """Log-spaced sweep grid (20 points on [0.1, 10] by default)."""
    return [float(v) for v in np.geomspace(lo, hi, points)]


@dataclass(frozen=True)
class StudyConfig:
    """One Monte Carlo experiment.

    ``workers`` only changes wall-clock time, never the result.
    """

    model: Model
    scenario: Scenario = Scenario.UNCONSTRAINED
    n: int = 100
    reps: int = 1000
    seed: int = 0
    compute_lrt: bool = False
    compute_s_only: bool = False
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        if int(self.n) != self.n or self.n < 5:
            raise ValueError(f"n must be an integer >= 5, got {self.n}")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ValueError(f"reps must be a positive integer, got {self.reps}")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if int(self.workers) != self.workers or self.workers < 1:
            raise ValueError(f"workers must be a positive integer, got {self.workers}")
        # fails early if the truth does not satisfy the scenario constraint
        self.scenario.truth(self.model)

    @property
    def truth(self) -> np.ndarray:
        return self.scenario.truth(self.model)


@dataclass(frozen=True)
class ParamSummary:
    param: str
    truth: float
    avg: float
    emp_se: float
    asym_se: float
    cp: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in SUMMARY_FIELDS}


@dataclass
class StudySummary:
    """Aggregated replications.

    Averages, SEs and coverage use converged replications only.  ``s_only``
    holds the same records for the fit that ignores R, when requested; an
    S-only fit that fails (typically a variance estimate on the zero
    boundary) is left out of those records and counted in ``s_only_failed``
    without failing its replication.
    """

    config: StudyConfig
    params: list[ParamSummary]
    converged_replications: int
    failed_replications: int
    lrt_rejection_percent: float | None = None
    s_only: list[ParamSummary] | None = None
    s_only_failed: int = 0
    estimates: np.ndarray = field(default=None, repr=False)

    def param(self, name: str) -> ParamSummary:
        for p in self.params:
            if p.param == name:
                return p
        raise KeyError(name)

    def as_dict(self) -> dict:
        m = self.config.model
        out = {
            "model": dict(zip(("b", "mu1", "sigma1sq", "mu2", "sigma2sq"), (m.boundary, *m.values))),
            "scenario": self.config.scenario.value,
            "n": self.config.n,
            "reps": self.config.reps,
            "seed": self.config.seed,
            "converged_replications": self.converged_replications,
            "failed_replications": self.failed_replications,
            "params": [p.row() for p in self.params],
            "lrt_rejection_percent": self.lrt_rejection_percent,
        }
        if self.s_only is not None:
            out["s_only"] = [p.row() for p in self.s_only]
            out["s_only_failed"] = self.s_only_failed
        return out


@dataclass
class _Replication:
    ok: bool
    estimate: np.ndarray | None = None
    se: np.ndarray | None = None
    s_only_estimate: np.ndarray | None = None
    s_only_se: np.ndarray | None = None
    reject: bool | None = None
    reason: str = ""


def _replicate(cfg: StudyConfig, index: int) -> _Replication:
    model = cfg.model
    B = model.boundary
    s, r = sample_pairs(model, cfg.n, RngStream(cfg.seed, index))
    sample = Sample(s, r)
    try:
        res = fit(sample, cfg.scenario, B)
        if not res.converged:
            return _Replication(False, reason=res.message)
        out = _Replication(True, res.estimate, res.se)
        if cfg.compute_lrt:
            full = res if cfg.scenario is Scenario.EQUAL_VARIANCE else None
            out.reject = lrt_equal_drift(sample, B, full_fit=full).reject
        if cfg.compute_s_only:
            try:
                so = fit_s_only(sample, B)
            except (PerturbedWienerError, ArithmeticError) as exc:
                log.info("S-only fit failed: %s", exc)
            else:
                if so.converged:
                    out.s_only_estimate, out.s_only_se = so.estimate, so.se
        return out
    except (PerturbedWienerError, ArithmeticError, ValueError) as exc:
        return _Replication(False, reason=f"{type(exc).__name__}: {exc}")


def _summarise(names, truth, est: np.ndarray, se: np.ndarray) -> list[ParamSummary]:
    out = []
    for j, name in enumerate(names):
        e, v, t = est[:, j], se[:, j], float(truth[j])
        covered = np.abs(e - t) <= 1.96 * v
        out.append(ParamSummary(
            param=name,
            truth=t,
            avg=float(np.mean(e)),
            emp_se=float(np.std(e, ddof=1)) if e.size > 1 else 0.0,
            asym_se=float(np.median(v)),
            cp=100.0 * float(np.mean(covered)),
        ))
    return out


def run_study(cfg: StudyConfig) -> StudySummary:
    """Run ``cfg.reps`` replications and aggregate them.

    Raises StudyFailure (carrying the partial summary as ``.summary``)
    when more than 5% of replications fail.
    """
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            reps = list(pool.map(_replicate, [cfg] * cfg.reps, range(cfg.reps),
                                 chunksize=max(1, cfg.reps // (4 * cfg.workers))))
    else:
        reps = [_replicate(cfg, i) for i in range(cfg.reps)]

    good = [r for r in reps if r.ok]
    failed = len(reps) - len(good)
    for i, r in enumerate(reps):
        if not r.ok:
            log.info("replication %d failed: %s", i, r.reason)

    names = cfg.scenario.param_names
    if good:
        est = np.array([r.estimate for r in good])
        se = np.array([r.se for r in good])
        params = _summarise(names, cfg.truth, est, se)
    else:
        est = np.empty((0, len(names)))
        params = [ParamSummary(p, float(t), *([math.nan] * 4)) for p, t in zip(names, cfg.truth)]

    summary = StudySummary(cfg, params, len(good), failed, estimates=est)
    if cfg.compute_lrt and good:
        summary.lrt_rejection_percent = 100.0 * float(np.mean([r.reject for r in good]))
    so_good = [r for r in good if r.s_only_estimate is not None]
    if cfg.compute_s_only:
        summary.s_only_failed = len(good) - len(so_good)
    if so_good:
        summary.s_only = _summarise(
            ("mu1", "sigma1sq"), cfg.model.values[:2],
            np.array([r.s_only_estimate for r in so_good]), np.array([r.s_only_se for r in so_good]),
        )

    if failed > MAX_FAILURE_RATE * cfg.reps:
        raise StudyFailure(f"{failed} of {cfg.reps} replications failed", failed, cfg.reps, summary)
    return summary


def sweep_model(model: Model, scenario: Scenario, axis: str, value: float) -> Model:
    """``model`` with one parameter moved, keeping the scenario's constraint.

    ``sigma2`` is the shared variance under equal variances and the
    post-intervention variance otherwise.  Under proportional variances a
    drift change rescales its variance so ``k`` stays fixed; ``k`` itself
    always sets ``sigma_i^2 = k mu_i``.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not (math.isfinite(value) and value > 0):
        raise ValueError(f"sweep values must be positive, got {value}")
    scenario = Scenario(scenario)
    mu1, s1, mu2, s2 = model.values
    B = model.boundary
    if axis == "k":
        return Model.proportional(B, mu1, mu2, value)
    if scenario is Scenario.PROPORTIONAL_VARIANCE and axis in ("mu1", "mu2"):
        k = model.proportionality
        return Model.proportional(B, value if axis == "mu1" else mu1, value if axis == "mu2" else mu2, k)
    if axis == "sigma2":
        if scenario in (Scenario.EQUAL_VARIANCE, Scenario.NO_EFFECT):
            return model.with_values(sigma1sq=value, sigma2sq=value)
        return model.with_values(sigma2sq=value)
    if scenario is Scenario.NO_EFFECT:
        return model.with_values(mu1=value, mu2=value)
    return model.with_values(**{axis: value})


def run_sweep(base: StudyConfig, axis: str, values: Sequence[float] | None = None) -> list[StudySummary]:
    """One study per grid value along ``axis`` (see ``sweep_model``)."""
    values = default_grid() if values is None else [float(v) for v in values]
    if not values:
        raise ValueError("sweep needs at least one value")
    cfgs = [replace(base, model=sweep_model(base.model, base.scenario, axis, v)) for v in values]
    return [run_study(c) for c in cfgs]


# ---------------------------------------------------------------------------
# output


def fmt(x) -> str:
    """17 significant digits, enough to round-trip any double."""
    if x is None:
        return ""
    return format(float(x), ".17g")


def write_summary_csv(summaries: Iterable[StudySummary], path, axis: str | None = None,
                      values: Sequence[float] | None = None) -> int:
    """One row per parameter per summary; returns the number of data rows.

    Sweeps prepend the axis value column, and S-only records (when
    present) appear with ``fit=s_only``.
    """
    summaries = list(summaries)
    head = ([axis] if axis else []) + list(SUMMARY_FIELDS) + ["fit", "lrt_rejection_percent", "failed"]
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for i, sm in enumerate(summaries):
            lead = [fmt(values[i])] if axis else []
            tail = [fmt(sm.lrt_rejection_percent), sm.failed_replications]
            for fit_name, recs in (("joint", sm.params), ("s_only", sm.s_only or [])):
                for p in recs:
                    w.writerow(lead + [p.param] + [fmt(getattr(p, k)) for k in SUMMARY_FIELDS[1:]]
                               + [fit_name] + tail)
                    rows += 1
    return rows


def _round_floats(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def write_summary_json(summaries: Iterable[StudySummary], path, axis: str | None = None,
                       values: Sequence[float] | None = None) -> None:
    summaries = list(summaries)
    if axis is None:
        doc = summaries[0].as_dict() if len(summaries) == 1 else [s.as_dict() for s in summaries]
    else:
        doc = {"axis": axis, "points": [{"value": v, **s.as_dict()} for v, s in zip(values, summaries)]}
    with open(path, "w") as fh:
        json.dump(_round_floats(doc), fh, indent=2)
        fh.write("\n")


def format_table(summary: StudySummary) -> str:
    """Plain-text table in the layout truth / avg / emp SE / asym SE / CP."""
    lines = [f"{'param':<10}{'truth':>10}{'avg':>10}{'emp SE':>10}{'asym SE':>10}{'CP':>7}"]
    blocks = [("", summary.params)]
    if summary.s_only:
        blocks.append(("S only", summary.s_only))
    for title, recs in blocks:
        if title:
            lines.append(title)
        for p in recs:
            lines.append(f"{p.param:<10}{p.truth:>10.4g}{p.avg:>10.4f}{p.emp_se:>10.4f}"
                         f"{p.asym_se:>10.4f}{p.cp:>7.1f}")
    if summary.lrt_rejection_percent is not None:
        lines.append(f"LRT rejections: {summary.lrt_rejection_percent:.1f}%")
    lines.append(f"replications: {summary.converged_replications} converged, "
                 f"{summary.failed_replications} failed")
    return "\n".join(lines)
