"""Command-line front end: ``pwiener {simulate,estimate,lrt,study,sweep}``.

Any command accepts ``--config FILE`` holding a JSON object whose keys are
the long flag names (``"sigma1sq"``, ``"s-only"``, ...).  Flags given on the
command line win over the file, the file wins over built-in defaults, and
unknown keys are rejected.

Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 too many failed
replications in a study.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import DegenerateSample, OptimFailure, PerturbedWienerError, StudyFailure
from .inference import Sample, fit, lrt_equal_drift
from .model import Model, Scenario
from .sampler import OracleConfig, RngStream, oracle_sample_pairs, sample_pairs
from .study import (
    SWEEP_AXES, StudyConfig, default_grid, fmt, format_table, run_study, run_sweep,
    write_summary_csv, write_summary_json,
)

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_STUDY = 0, 2, 3, 4

# Reference Monte Carlo design: common phase-1 values and mu2,
# one sigma2sq per row.
TABLE1_BASE = dict(b=10.0, mu1=1.0, sigma1sq=0.4, mu2=0.1, scenario="free")
TABLE1_SIGMA2SQ = (0.026, 0.059, 0.094, 0.131)

SCENARIOS = ("free", "eqvar", "propvar")

DEFAULTS = {
    "simulate": dict(b=10.0, n=100, seed=0, oracle=False, dt=1e-3, horizon=64, out="-"),
    "estimate": dict(b=10.0, scenario="free", out="-"),
    "lrt": dict(b=10.0, out="-"),
    "study": dict(b=10.0, scenario="free", n=100, reps=1000, seed=0, lrt=False, s_only=False,
                  workers=1, table1=False, out="study"),
    "sweep": dict(b=10.0, scenario="free", n=100, reps=1000, seed=0, lrt=False, s_only=False,
                  workers=1, points=20, lo=0.1, hi=10.0, out="sweep"),
}

log = logging.getLogger("perturbed_wiener")


class InputError(Exception):
    """Bad flags, config or data; maps to exit code 2."""


# ---------------------------------------------------------------------------
# argument parsing


def _seed(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got {v}")
    return v


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_flags(p: argparse.ArgumentParser, data: bool = False):
    p.add_argument("--b", type=float, help="boundary B (default 10)")
    if data:
        return
    p.add_argument("--mu1", type=float, help="pre-intervention drift")
    p.add_argument("--sigma1sq", type=float, help="pre-intervention diffusion coefficient")
    p.add_argument("--mu2", type=float, help="post-intervention drift")
    p.add_argument("--sigma2sq", type=float, help="post-intervention diffusion coefficient")
    p.add_argument("--k", type=float, help="set sigma_i^2 = k * mu_i instead of giving the variances")


def _study_flags(p: argparse.ArgumentParser):
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--n", type=int, help="sample size per replication")
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--seed", type=_seed)
    p.add_argument("--lrt", action="store_true", default=argparse.SUPPRESS,
                   help="also run the equal-drift likelihood ratio test")
    p.add_argument("--s-only", dest="s_only", action="store_true", default=argparse.SUPPRESS,
                   help="also fit (mu1, sigma1sq) from S alone")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--out", help="output prefix; writes PREFIX.csv and PREFIX.json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pwiener", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = dict(argument_default=argparse.SUPPRESS)

    p = sub.add_parser("simulate", help="draw (s, r) pairs", **common)
    _model_flags(p)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--oracle", action="store_true", help="use the discretised-path simulator")
    p.add_argument("--dt", type=float, help="oracle time step")
    p.add_argument("--horizon", type=int, help="oracle renewal cycles before inspection")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.add_argument("--config")

    for name, helptext in (("estimate", "fit a scenario to a data file"),
                           ("lrt", "test mu1 = mu2 on a data file")):
        p = sub.add_parser(name, help=helptext, **common)
        p.add_argument("data", nargs="?", help="CSV with header s,r")
        _model_flags(p, data=True)
        if name == "estimate":
            p.add_argument("--scenario", choices=SCENARIOS)
        p.add_argument("--out", help="output JSON (default stdout)")
        p.add_argument("--config")

    p = sub.add_parser("study", help="Monte Carlo replication study", **common)
    _model_flags(p)
    _study_flags(p)
    p.add_argument("--table1", action="store_true", help="run the four reference parameter rows (sigma2sq 0.026, 0.059, 0.094, 0.131)")
    p.add_argument("--config")

    p = sub.add_parser("sweep", help="studies along one parameter axis", **common)
    _model_flags(p)
    _study_flags(p)
    p.add_argument("--axis", choices=SWEEP_AXES)
    p.add_argument("--values", type=_values, help="comma-separated grid (default: log grid)")
    p.add_argument("--points", type=int, help="log-grid size")
    p.add_argument("--lo", type=float, help="log-grid lower end")
    p.add_argument("--hi", type=float, help="log-grid upper end")
    p.add_argument("--config")
    return parser


def _load_config(path: str, allowed: set[str]) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"config {path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise InputError(f"config {path}: expected a JSON object")
    out = {}
    for key, value in doc.items():
        k = key.lstrip("-").replace("-", "_")
        if k not in allowed:
            raise InputError(f"config {path}: unknown key {key!r}")
        out[k] = value
    return out


def resolve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge defaults, config file and explicit flags (in increasing priority)."""
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    sub = parser._subparsers._group_actions[0].choices[args.command]  # noqa: SLF001
    allowed = {a.dest for a in sub._actions if a.dest not in ("help", "config")}  # noqa: SLF001
    conf = _load_config(args.config, allowed) if getattr(args, "config", None) else {}
    return {**DEFAULTS[args.command], **conf, **given}


# ---------------------------------------------------------------------------
# validation helpers


def _positive(cfg: dict, *names):
    for name in names:
        v = cfg.get(name)
        if v is None:
            raise InputError(f"--{name} is required")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
            raise InputError(f"--{name} must be a positive number, got {v!r}")


def _integer(cfg: dict, name: str, minimum: int):
    v = cfg.get(name)
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise InputError(f"--{name} must be an integer >= {minimum}, got {v!r}")


def _seed_value(cfg: dict) -> int:
    v = cfg.get("seed")
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2**64:
        raise InputError(f"--seed must be a 64-bit unsigned integer, got {v!r}")
    return v


def _scenario(cfg: dict) -> Scenario:
    v = cfg.get("scenario")
    if v not in SCENARIOS:
        raise InputError(f"--scenario must be one of {SCENARIOS}, got {v!r}")
    return Scenario(v)


def _model(cfg: dict) -> Model:
    _positive(cfg, "b", "mu1", "mu2")
    if cfg.get("k") is not None:
        if cfg.get("sigma1sq") is not None or cfg.get("sigma2sq") is not None:
            raise InputError("give either --k or the two variances, not both")
        _positive(cfg, "k")
        return Model.proportional(cfg["b"], cfg["mu1"], cfg["mu2"], cfg["k"])
    _positive(cfg, "sigma1sq", "sigma2sq")
    return Model.from_values(cfg["b"], cfg["mu1"], cfg["sigma1sq"], cfg["mu2"], cfg["sigma2sq"])


def read_data(path) -> Sample:
    """Read a ``s,r`` CSV; malformed rows raise InputError naming their line."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["s", "r"]:
        raise InputError(f"{path}: line 1: expected header 's,r'")
    s, r, problems = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            problems.append(f"line {lineno}: expected 2 fields, got {len(row)}")
            continue
        try:
            a, b = float(row[0]), float(row[1])
        except ValueError:
            problems.append(f"line {lineno}: non-numeric value in {row}")
            continue
        if not (math.isfinite(a) and math.isfinite(b) and a > 0 and b > 0):
            problems.append(f"line {lineno}: values must be positive and finite, got {row}")
            continue
        s.append(a)
        r.append(b)
    if problems:
        raise InputError(f"{path}: " + "; ".join(problems[:20]))
    if not s:
        raise InputError(f"{path}: no data rows")
    return Sample(np.array(s), np.array(r))


def write_data(path: str, s, r) -> None:
    lines = ["s,r"] + [f"{fmt(a)},{fmt(b)}" for a, b in zip(s, r)]
    text = "\n".join(lines) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _emit_json(path: str, doc) -> None:
    text = json.dumps(doc, indent=2) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: dict) -> int:
    model = _model(cfg)
    _integer(cfg, "n", 1)
    rng = RngStream(_seed_value(cfg))
    if cfg["oracle"]:
        try:
            oc = OracleConfig(dt=float(cfg["dt"]), horizon=cfg["horizon"])
            oc.check(model)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        s, r = oracle_sample_pairs(model, cfg["n"], oc, rng)
    else:
        s, r = sample_pairs(model, cfg["n"], rng)
    write_data(cfg["out"], s, r)
    return EXIT_OK


def _data(cfg: dict) -> Sample:
    if not cfg.get("data"):
        raise InputError("a data file is required")
    return read_data(cfg["data"])


def cmd_estimate(cfg: dict) -> int:
    _positive(cfg, "b")
    scenario = _scenario(cfg)
    sample = _data(cfg)
    res = fit(sample, scenario, cfg["b"])
    doc = res.as_dict()
    doc["n"] = sample.n
    _emit_json(cfg["out"], doc)
    return EXIT_OK


def cmd_lrt(cfg: dict) -> int:
    _positive(cfg, "b")
    sample = _data(cfg)
    _emit_json(cfg["out"], lrt_equal_drift(sample, cfg["b"]).as_dict())
    return EXIT_OK


def _study_config(cfg: dict, model: Model) -> StudyConfig:
    _integer(cfg, "n", 5)
    _integer(cfg, "reps", 1)
    _integer(cfg, "workers", 1)
    try:
        return StudyConfig(model=model, scenario=_scenario(cfg), n=cfg["n"], reps=cfg["reps"],
                           seed=_seed_value(cfg), compute_lrt=bool(cfg["lrt"]),
                           compute_s_only=bool(cfg["s_only"]), workers=cfg["workers"])
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _write_outputs(prefix: str, summaries, axis=None, values=None) -> None:
    write_summary_csv(summaries, f"{prefix}.csv", axis, values)
    write_summary_json(summaries, f"{prefix}.json", axis, values)


def _print_points(summaries, axis, values) -> None:
    for v, sm in zip(values, summaries):
        print(f"{axis} = {v:g}")
        print(format_table(sm))
        print()


def cmd_study(cfg: dict) -> int:
    if cfg["table1"]:
        # the preset fixes model and scenario; n, reps, seed etc. stay free
        clash = [k for k in ("mu1", "sigma1sq", "mu2", "sigma2sq", "k") if cfg.get(k) is not None]
        if clash or cfg["scenario"] != "free" or cfg["b"] != TABLE1_BASE["b"]:
            raise InputError("--table1 fixes b, the model parameters and the scenario")
        cfg.update(TABLE1_BASE, n=cfg["n"], sigma2sq=TABLE1_SIGMA2SQ[0])
        base = _study_config(cfg, _model(cfg))
        summaries = run_sweep(base, "sigma2", TABLE1_SIGMA2SQ)
        _print_points(summaries, "sigma2sq", TABLE1_SIGMA2SQ)
        _write_outputs(cfg["out"], summaries, "sigma2sq", TABLE1_SIGMA2SQ)
        return EXIT_OK
    study = _study_config(cfg, _model(cfg))
    summary = run_study(study)
    print(format_table(summary))
    _write_outputs(cfg["out"], [summary])
    return EXIT_OK


def cmd_sweep(cfg: dict) -> int:
    if cfg.get("axis") is None:
        raise InputError("--axis is required")
    values = cfg.get("values")
    if values is None:
        _integer(cfg, "points", 1)
        _positive(cfg, "lo", "hi")
        values = default_grid(cfg["points"], cfg["lo"], cfg["hi"])
    if not values or any(not isinstance(v, (int, float)) or not v > 0 for v in values):
        raise InputError(f"--values must be positive numbers, got {values!r}")
    base = _study_config(cfg, _model(cfg))
    try:
        summaries = run_sweep(base, cfg["axis"], values)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    _print_points(summaries, cfg["axis"], values)
    _write_outputs(cfg["out"], summaries, cfg["axis"], values)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "lrt": cmd_lrt,
    "study": cmd_study,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, parser)
        return COMMANDS[args.command](cfg)
    except StudyFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STUDY
    except (InputError, DegenerateSample, OptimFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, TypeError, PerturbedWienerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
