"""Exit criteria.

Runs at desk scale by default (fewer replications, bands doubled where the
criterion says so).  Set PWIENER_FULL=1 for the full replication counts and
the original bands.  Each criterion adds one PASS/FAIL line to the terminal
summary.
"""
import itertools
import math
import os
from dataclasses import replace

import numpy as np
import pytest

import oracles
from perturbed_wiener import _kernels
from perturbed_wiener import numerics as nm
from perturbed_wiener.errors import StudyFailure
from perturbed_wiener.inference import Sample, fit
from perturbed_wiener.model import (
    Model, Scenario, log_pdf_joint, log_pdf_joint_prop, moments_X0, pdf_joint_SR, pdf_R, pdf_S, pdf_X0,
    r_upper_limit, s_upper_limit, special_case_summaries, x0_lower_limit,
)
from perturbed_wiener.sampler import OracleConfig, RngStream, oracle_sample_pairs, sample_pairs
from perturbed_wiener.study import StudyConfig, default_grid, run_study, run_sweep, sweep_model

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

FULL = os.environ.get("PWIENER_FULL") == "1"
B = 10.0
ROW1 = Model.from_values(B, 1.0, 0.4, 0.1, 0.026)
NAMES = ("mu1", "sigma1sq", "mu2", "sigma2sq")

# reference (avg, empirical SE, CP %) per parameter, keyed by sigma2sq
TABLE1 = {
    0.026: dict(mu1=(1.0, 0.0405, 94.7), sigma1sq=(0.4, 0.1079, 91.6), mu2=(0.1, 0.0032, 94.8),
                sigma2sq=(0.026, 0.0083, 92.7)),
    0.059: dict(mu1=(1.0020, 0.0438, 93.7), sigma1sq=(0.4016, 0.1213, 91.3), mu2=(0.1001, 0.0044, 93.7),
                sigma2sq=(0.0578, 0.0154, 91.9)),
    0.094: dict(mu1=(1.0023, 0.0468, 94.5), sigma1sq=(0.3983, 0.1315, 91.8), mu2=(0.1000, 0.0053, 93.7),
                sigma2sq=(0.0926, 0.0221, 92.1)),
    0.131: dict(mu1=(1.0020, 0.0458, 94.9), sigma1sq=(0.3989, 0.1388, 91.4), mu2=(0.1001, 0.0058, 95.5),
                sigma2sq=(0.1290, 0.0288, 92.9)),
}

TABLE_REPS = 1000 if FULL else 250
WIDEN = 1 if FULL else 2
AVG_BAND = dict(mu1=0.01, mu2=0.01, sigma1sq=0.03, sigma2sq=0.03)
SE_BAND = 0.10
CP_BAND = 2.0


def table_row_check(summary, expected):
    """Compare a study summary with a reference row; returns (ok, message lines)."""
    ok, lines = True, []
    for name in NAMES:
        p = summary.param(name)
        avg, se, cp = expected[name]
        checks = (
            abs(p.avg - avg) <= WIDEN * AVG_BAND[name] * avg,
            abs(p.emp_se - se) <= WIDEN * SE_BAND * se,
            abs(p.cp - cp) <= WIDEN * CP_BAND,
        )
        ok &= all(checks)
        lines.append(f"{name}: avg {p.avg:.4f} ({avg}) emp_se {p.emp_se:.4f} ({se}) cp {p.cp:.1f} ({cp})"
                     f"{'' if all(checks) else '  <-- out of band'}")
    return ok, lines


def test_criterion_1_table_row1(verdict):
    sm = run_study(StudyConfig(ROW1, n=100, reps=TABLE_REPS, seed=1))
    ok, lines = table_row_check(sm, TABLE1[0.026])
    print("\n".join(lines))
    verdict("1 table row 1", ok, f"reps={TABLE_REPS}, failed={sm.failed_replications}")
    assert ok, lines


def test_criterion_2_table_rows_2_to_4(verdict):
    values = (0.059, 0.094, 0.131)
    sms = run_sweep(StudyConfig(ROW1.with_values(sigma2sq=values[0]), n=100, reps=TABLE_REPS, seed=2),
                    "sigma2", values)
    ok, report = True, []
    for v, sm in zip(values, sms):
        row_ok, lines = table_row_check(sm, TABLE1[v])
        ok &= row_ok
        report += [f"sigma2sq={v}"] + lines
    print("\n".join(report))
    verdict("2 table rows 2-4", ok, f"reps={TABLE_REPS}")
    assert ok, report


LRT_REPS = 1000 if FULL else 400


def lrt_rate(sigma2, mu2, seed):
    cfg = StudyConfig(Model.from_values(B, 1.0, sigma2, mu2, sigma2), Scenario.EQUAL_VARIANCE, n=100,
                      reps=LRT_REPS, seed=seed, compute_lrt=True)
    return run_study(cfg).lrt_rejection_percent


def test_criterion_3_lrt_size(verdict):
    band = 2.0 if FULL else 3.0
    targets = {0.1: (5.0, band), 0.4: (5.0, band), 1.0: (5.0, band), 2.0: (10.4, 3.0)}
    rates = {s2: lrt_rate(s2, 1.0, 30 + i) for i, s2 in enumerate(targets)}
    ok = all(abs(rates[s2] - t) <= b for s2, (t, b) in targets.items())
    detail = ", ".join(f"s2={s2}: {rates[s2]:.1f}%" for s2 in targets)
    verdict("3 LRT size", ok, detail)
    assert ok, detail


def test_criterion_4_lrt_power(verdict):
    far = {mu2: lrt_rate(0.1, mu2, 40 + i) for i, mu2 in enumerate((0.6, 1.4))}
    near = {mu2: lrt_rate(0.1, mu2, 50 + i) for i, mu2 in enumerate((0.75, 1.25))}
    ok = all(v >= 97.0 for v in far.values()) and all(v > 50.0 for v in near.values())
    detail = ", ".join(f"mu2={k}: {v:.1f}%" for k, v in {**far, **near}.items())
    verdict("4 LRT power", ok, detail)
    assert ok, detail


def test_criterion_5_joint_beats_s_only(verdict):
    # For large mu2 the sigma2sq maximum often sits on the zero boundary, where
    # no Hessian exists; those replications fail and, past 5%, the study raises.
    # The comparison then uses the converged replications the error carries;
    # the S-only record is built from the same replications.
    model = ROW1.with_values(sigma2sq=0.1)
    base = StudyConfig(model, n=100, reps=250, seed=5, compute_s_only=True)
    grid = default_grid()
    bad, failed = [], []
    for v in grid:
        cfg = replace(base, model=sweep_model(model, Scenario.UNCONSTRAINED, "mu2", v))
        try:
            sm = run_study(cfg)
        except StudyFailure as exc:
            sm = exc.summary
        failed.append(sm.failed_replications)
        so = {p.param: p for p in sm.s_only}
        for name in ("mu1", "sigma1sq"):
            j = sm.param(name)
            for kind in ("emp_se", "asym_se"):
                if not getattr(j, kind) < getattr(so[name], kind):
                    bad.append(f"mu2={v:.3g} {name} {kind}: joint {getattr(j, kind):.4g} "
                               f">= S-only {getattr(so[name], kind):.4g}")
    print("\n".join(bad))
    print("failed replications per point:", failed)
    verdict("5 joint SE < S-only SE", not bad,
            f"{len(grid)} points, {len(bad)} violations, failed reps per point max {max(failed)}/250")
    assert not bad, bad


def test_criterion_6_properties(verdict):
    def quad_s(f, ph, rel=1e-9):
        return nm.integrate(f, 0.0, s_upper_limit(ph, B), rel, points=[B / ph.mu])

    def quad_r(f, m, hint, rel=1e-9):
        return nm.integrate(f, 0.0, r_upper_limit(m), rel, points=[hint])

    ph = ROW1.phase1
    hint_r = (B - moments_X0(ph, B)[0]) / ROW1.phase2.mu
    errs = {
        "pdf_S": abs(quad_s(lambda s: float(pdf_S(s, ph, B)), ph) - 1),
        "pdf_X0": abs(nm.integrate(lambda x: float(pdf_X0(x, ph, B)), x0_lower_limit(ph, B), B, 1e-9,
                                   points=[0.0]) - 1),
        "pdf_R": abs(quad_r(lambda r: float(pdf_R(r, ROW1)), ROW1, hint_r) - 1),
        "pdf_joint": abs(quad_s(lambda s: quad_r(lambda r: float(pdf_joint_SR(s, r, ROW1)), ROW1,
                                                 max(B - s, 0.5) / 0.1), ph, 1e-8) - 1),
        "marginal": max(abs(quad_r(lambda r: float(pdf_joint_SR(s, r, ROW1)), ROW1, max(B - s, 0.5) / 0.1)
                            - float(pdf_S(s, ph, B))) for s in (0.5, 3.0, 8.0, 15.0)),
    }
    ok = all(e < 1e-6 for e in errs.values())

    s, r = np.meshgrid(np.linspace(0.1, 25, 20), np.linspace(0.05, 12, 20))
    gen = log_pdf_joint(s, r, 1.0, 1.0, 2.0, 2.0, B)
    red = log_pdf_joint_prop(s, r, 1.0, 2.0, 1.0, B)
    reduction = float(np.max(np.abs(np.exp(gen - red) - 1)))
    ok &= reduction < 1e-10

    corr0 = special_case_summaries(1.0, 2.0, B / math.sqrt(3.0), B).corr_SR
    ok &= abs(corr0) < 1e-15
    cvs = [special_case_summaries(m1, m2, 1.0, B) for m1, m2 in itertools.product((0.1, 1.0, 7.0), repeat=2)]
    ok &= all(c.cv_S == c.cv_R for c in cvs)
    ok &= max(c.cv_S for c in cvs) - min(c.cv_S for c in cvs) < 1e-14

    detail = (", ".join(f"{k} {v:.1e}" for k, v in errs.items())
              + f", reduction {reduction:.1e}, corr(B/sqrt3) {corr0:.1e}")
    verdict("6 property suite", ok, detail)
    assert ok, detail


def test_criterion_7_oracle_equivalence(verdict):
    n = 100_000
    cfg = OracleConfig(dt=1e-2, horizon=10)
    os_, or_ = oracle_sample_pairs(ROW1, n, cfg, RngStream(7, 1))
    es, er = sample_pairs(ROW1, n, RngStream(7, 2))
    p = oracles.chi2_binned(np.column_stack([es, er]), np.column_stack([os_, or_]), bins=10)

    s, r = sample_pairs(Model.proportional(B, 1.0, 2.0, 1.0), n, RngStream(7, 3))
    rho = float(np.corrcoef(s, r)[0, 1])
    se = (1 - rho**2) / math.sqrt(n)
    ok = p > 0.01 and abs(rho - (-97 / 169)) < 3 * se
    detail = f"2-D chi2 p={p:.3f}, corr {rho:.4f} vs {-97 / 169:.4f} (3 SE = {3 * se:.4f})"
    verdict("7 oracle equivalence", ok, detail)
    assert ok, detail


def test_criterion_8_grid_search(verdict):
    smp = Sample(*sample_pairs(ROW1, 10, RngStream(8)))
    res = fit(smp, Scenario.UNCONSTRAINED, B)
    best_fit = _kernels.joint_loglik(smp.s, smp.r, *res.estimate, B)
    axes = [t * np.logspace(-1, 1, 21) for t in ROW1.values]
    best_grid, arg = -math.inf, None
    for mu1, v1, mu2 in itertools.product(*axes[:3]):
        for v2 in axes[3]:
            ll = _kernels.joint_loglik(smp.s, smp.r, mu1, v1, mu2, v2, B)
            if ll > best_grid:
                best_grid, arg = ll, (mu1, v1, mu2, v2)
    # with ten pairs the optimum may sit on a variance boundary, where the
    # Hessian (and so ``converged``) is unavailable; the value still counts
    ok = best_grid <= best_fit + 1e-4
    detail = (f"fit {best_fit:.6f} (converged={res.converged}), best lattice {best_grid:.6f} "
              f"at {np.round(arg, 4).tolist()}")
    verdict("8 grid search", ok, detail)
    assert ok, detail
