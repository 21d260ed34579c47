"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, plotting, report
from .bootstrap import default_m_grid
from .dgp import DgpSpec
from .estimator import (
    SIGMA_FLOOR,
    build_chunk_schedule,
    classical_one_step,
    lower_bound,
    online_one_step,
    two_sided_ci,
)
from .model import Dataset, DomainError
from .nuisance import KernelLearner, LearnerError, NpmleLearner

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
SEED_ENV = "OPTVALUE_SEED"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# input


def read_wAy(stream) -> tuple:
    """Parse ``w,a,y`` records; returns ``(w, a, y)`` string-converted columns.

    Comma, tab and semicolon delimiters are recognized from the header line.
    Blank lines are skipped. Raises :class:`DataError` naming the offending
    line, or :class:`UsageError` when there are no records.
    """
    lines = stream.read().splitlines()
    start = 0
    while start < len(lines) and not lines[start].strip():
        start += 1
    if start == len(lines):
        raise UsageError("input is empty")
    header = lines[start].lstrip("﻿")
    delim = next((d for d in ",\t;" if d in header), ",")
    names = [h.strip().lower() for h in header.split(delim)]
    if names != ["w", "a", "y"]:
        raise DataError(f"line {start + 1}: header must be w,a,y, got {header!r}")
    w, a, y = [], [], []
    for num, line in enumerate(lines[start + 1:], start=start + 2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(delim)]
        if len(parts) != 3:
            raise DataError(f"line {num}: expected 3 fields, got {len(parts)}")
        try:
            wv, av, yv = float(parts[0]), float(parts[1]), float(parts[2])
        except ValueError:
            raise DataError(f"line {num}: non-numeric field in {line!r}") from None
        if not (math.isfinite(wv) and math.isfinite(yv)):
            raise DataError(f"line {num}: w and y must be finite")
        if av not in (0.0, 1.0):
            raise DataError(f"line {num}: a must be 0 or 1, got {parts[1]!r}")
        w.append(wv)
        a.append(int(av))
        y.append(yv)
    if not w:
        raise UsageError("input has a header but no records")
    return np.array(w), np.array(a, dtype=np.int64), np.array(y)


def _dataset(w, a, y, learner: str) -> Dataset:
    if learner == "npmle":
        if not np.all(w == np.round(w)):
            raise DataError("the npmle learner needs integer w labels")
        return Dataset(w.astype(np.int64), a, y, "discrete")
    return Dataset(w, a, y, "continuous")


# ---------------------------------------------------------------------------
# configuration

_INT_KEYS = {"n", "ell", "reps", "seed", "boot_draws", "refits", "threads"}
_FLOAT_KEYS = {"alpha", "sigma_floor"}
_STR_KEYS = {"dgp", "methods", "m_grid", "out", "learner", "ells"}
_BOOL_KEYS = {"no_chart", "identity"}
CONFIG_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _BOOL_KEYS


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for num, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                out[key] = int(value)
            elif key in _FLOAT_KEYS:
                out[key] = float(value)
            elif key in _BOOL_KEYS:
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                out[key] = value.lower() in ("true", "1", "yes")
            else:
                out[key] = value
        except ValueError:
            raise UsageError(f"{path}:{num}: bad value for {key}: {value!r}") from None
    return out


def _settings(args, defaults: dict) -> dict:
    """Flags over config file over environment over built-in defaults."""
    conf = read_config(args.config) if getattr(args, "config", None) else {}
    out = dict(defaults)
    env = os.environ.get(SEED_ENV)
    if env is not None and "seed" in out:
        try:
            out["seed"] = int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    for key, value in conf.items():
        if key not in defaults:
            raise UsageError(f"config key {key!r} does not apply to this command")
        out[key] = value
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None and value is not False:
            out[key] = value
    return out


def _int_list(text, name):
    try:
        vals = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise UsageError(f"{name} must be a comma-separated list of integers") from None
    if not vals:
        raise UsageError(f"{name} is empty")
    return vals


def _require(s, *keys):
    for key in keys:
        if s.get(key) is None:
            raise UsageError(f"missing required setting --{key.replace('_', '-')}")


def _out_dir(s):
    if not s.get("out"):
        return None
    path = Path(s["out"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write(path, writer, *args):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer(*args, fh)


# ---------------------------------------------------------------------------
# commands


def cmd_estimate(args, out) -> int:
    s = _settings(args, {
        "ell": None, "alpha": 0.05, "sigma_floor": SIGMA_FLOOR, "learner": None,
        "seed": 0, "refits": None, "out": None,
    })
    if args.input == "-":
        w, a, y = read_wAy(sys.stdin)
    else:
        try:
            with open(args.input, encoding="utf-8-sig", newline="") as fh:
                w, a, y = read_wAy(fh)
        except OSError as exc:
            raise UsageError(f"cannot read {args.input}: {exc}") from None
    learner_name = s["learner"] or ("npmle" if np.all(w == np.round(w)) else "kernel")
    if learner_name not in ("npmle", "kernel"):
        raise UsageError("--learner must be npmle or kernel")
    data = _dataset(w, a, y, learner_name)
    n = len(data)
    ell = s["ell"] if s["ell"] is not None else max(1, n // 10)
    try:
        schedule = build_chunk_schedule(n, ell, s["refits"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0.0 < s["alpha"] < 0.5:
        raise UsageError("--alpha must lie in (0, 0.5)")
    learner = NpmleLearner() if learner_name == "npmle" else KernelLearner()
    est = online_one_step(data, schedule, learner, s["sigma_floor"], seed=(s["seed"], 1))
    lo, hi = two_sided_ci(est, s["alpha"])
    lb = lower_bound(est, s["alpha"])
    classical = classical_one_step(data, learner, seed=(s["seed"], 2))
    c_lo, c_hi = two_sided_ci(classical, s["alpha"])
    fields = {
        "n": n, "ell_n": ell, "blocks": schedule.blocks, "learner": learner_name,
        "alpha": float(s["alpha"]), "psi_hat": est.psi_hat, "gamma_n": est.gamma_n,
        "se": float(est.se), "ci_lower": float(lo), "ci_upper": float(hi), "lower_bound": float(lb),
        "classical_psi_hat": classical.psi_hat, "classical_se": classical.se,
        "classical_ci_lower": float(c_lo), "classical_ci_upper": float(c_hi),
    }
    width = max(len(k) for k in fields)
    for key, value in fields.items():
        out.write(f"{key.ljust(width)}  {value:.6f}\n" if isinstance(value, float) else f"{key.ljust(width)}  {value}\n")
    path = _out_dir(s)
    if path is not None:
        with open(path / "estimate.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(fields) + "\n")
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in fields.values()) + "\n")
    return EXIT_OK


_SIM_DEFAULTS = {
    "dgp": None, "n": None, "ell": None, "reps": 2000, "methods": "online,classical",
    "seed": 0, "alpha": 0.05, "m_grid": None, "boot_draws": 500, "sigma_floor": SIGMA_FLOOR,
    "refits": None, "threads": 1, "out": None, "no_chart": False,
}


def _experiment(s) -> harness.ExperimentConfig:
    _require(s, "dgp", "n")
    try:
        dgp = DgpSpec.parse(s["dgp"])
        ell = s["ell"] if s["ell"] is not None else harness.default_ell(dgp, s["n"])
        methods = tuple(m.strip() for m in s["methods"].split(",") if m.strip())
        m_grid = _int_list(s["m_grid"], "m-grid") if s["m_grid"] else None
        return harness.ExperimentConfig(
            dgp=dgp, n=s["n"], ell_n=ell, methods=methods, replicates=s["reps"],
            alpha=s["alpha"], seed=s["seed"], m_grid=m_grid, boot_draws=s["boot_draws"],
            sigma_floor=s["sigma_floor"], refits=s["refits"], threads=s["threads"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args, out) -> int:
    s = _settings(args, _SIM_DEFAULTS)
    cfg = _experiment(s)
    rep, records = harness.run_experiment(cfg)
    out.write(report.summary_text(rep))
    path = _out_dir(s)
    if path is not None:
        _write(path / "summary.csv", report.write_summary, rep)
        _write(path / "replicates.csv", report.write_replicates, records, rep)
        if not s["no_chart"]:
            plotting.coverage_chart(rep, path / "chart.svg")
    return EXIT_OK


def cmd_compare_bootstrap(args, out) -> int:
    s = _settings(args, {
        "dgp": None, "n": None, "ell": None, "m_grid": None, "reps": 500, "boot_draws": 500,
        "seed": 0, "alpha": 0.05, "threads": 1, "out": None, "no_chart": False,
    })
    _require(s, "dgp", "n")
    grid = _int_list(s["m_grid"], "m-grid") if s["m_grid"] else default_m_grid(s["n"])
    try:
        sweep = harness.bootstrap_sweep(
            s["dgp"], s["n"], grid, replicates=s["reps"], boot_draws=s["boot_draws"],
            ell_n=s["ell"], seed=s["seed"], alpha=s["alpha"], threads=s["threads"],
        )
    except ValueError as exc:
        if isinstance(exc, (LearnerError, DomainError)):
            raise
        raise UsageError(str(exc)) from None
    out.write(report.sweep_text(sweep))
    path = _out_dir(s)
    if path is not None:
        _write(path / "summary.csv", report.write_summary, sweep.report)
        _write(path / "sweep.csv", report.write_sweep, sweep)
        _write(path / "replicates.csv", report.write_replicates, sweep.records, sweep.report)
        if not s["no_chart"]:
            plotting.sweep_chart(sweep, path / "chart.svg")
    return EXIT_OK


def cmd_summarize(args, out) -> int:
    try:
        with open(args.replicates, encoding="utf-8", newline="") as fh:
            meta, records = report.read_replicates(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {args.replicates}: {exc}") from None
    except report.FormatError as exc:
        raise DataError(str(exc)) from None
    rep = harness.summarize(records, meta["dgp"], meta["n"], meta["ell_n"], meta["alpha"], meta["mode"])
    out.write(report.summary_text(rep))
    if args.out:
        path = Path(args.out)
        path.mkdir(parents=True, exist_ok=True)
        _write(path / "summary.csv", report.write_summary, rep)
    return EXIT_OK


def cmd_permutation(args, out) -> int:
    s = _settings(args, {**_SIM_DEFAULTS, "reps": 500, "methods": "online", "identity": False})
    cfg = _experiment(s)
    res = harness.permutation_sensitivity(cfg, identity=s["identity"])
    out.write(
        f"{cfg.dgp.value}  n={cfg.n}  ell_n={cfg.ell_n}  replicates={len(res.differences)}  failures={res.failures}\n"
        f"joint-coverage agreement  {100 * res.agreement:.1f}% ± {100 * res.agreement_se:.1f}\n"
        f"coverage per ordering     {100 * res.coverage[0]:.1f}%, {100 * res.coverage[1]:.1f}%\n"
        f"estimate difference sd    {res.difference_sd:.6f}\n"
        f"mean |difference|         {res.mean_abs_difference:.6f}\n"
    )
    path = _out_dir(s)
    if path is not None:
        with open(path / "differences.csv", "w", encoding="utf-8", newline="") as fh:
            fh.write("replicate_order,difference\n")
            fh.writelines(f"{k},{d!r}\n" for k, d in enumerate(res.differences.tolist()))
        if not s["no_chart"]:
            plotting.difference_chart(res.differences, path / "chart.svg", f"{cfg.dgp.value}, n={cfg.n}")
    return EXIT_OK


def cmd_elln(args, out) -> int:
    s = _settings(args, {
        "dgp": None, "n": None, "ells": None, "reps": 500, "seed": 0, "alpha": 0.05,
        "sigma_floor": SIGMA_FLOOR, "threads": 1,
    })
    _require(s, "dgp", "n", "ells")
    try:
        res = harness.elln_sensitivity(
            s["dgp"], s["n"], _int_list(s["ells"], "ells"), s["reps"], seed=s["seed"],
            alpha=s["alpha"], sigma_floor=s["sigma_floor"], threads=s["threads"],
        )
    except ValueError as exc:
        if isinstance(exc, (LearnerError, DomainError)):
            raise
        raise UsageError(str(exc)) from None
    for ell, w, se, cov in zip(res.ell_values, res.mean_width, res.mean_width_se, res.coverage):
        out.write(f"ell_n={ell:<6d} mean width {w:.5f} ± {se:.5f}  coverage {100 * cov:.1f}%\n")
    for a, b, ratio, se, expected in res.ratios:
        out.write(f"width ratio ell {a} -> {b}: {ratio:.4f} ± {se:.4f}  (sqrt((n-{a})/(n-{b})) = {expected:.4f})\n")
    if res.failures:
        out.write(f"failed replicates excluded: {res.failures}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="optvalue", description="Online one-step inference for the optimal treatment-rule value.")
    p.add_argument("-v", "--verbose", action="store_true", help="log replicate failures")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("estimate", help="online and classical estimates on a w,a,y file")
    e.add_argument("input", help="CSV path with header w,a,y, or - for stdin")
    e.add_argument("--ell", type=int, help="initial chunk size (default n // 10)")
    e.add_argument("--alpha", type=float)
    e.add_argument("--sigma-floor", type=float)
    e.add_argument("--learner", choices=("npmle", "kernel"), help="default: npmle for integer w")
    e.add_argument("--refits", type=int, help="number of refit blocks (default (n - ell) / ell)")
    e.add_argument("--seed", type=int)
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_estimate)

    def experiment_flags(q, reps_help):
        q.add_argument("--config", help="key = value file; flags override it")
        q.add_argument("--dgp", help="d-e, c-ne or c-e")
        q.add_argument("--n", type=int)
        q.add_argument("--ell", type=int, help="default: the reference design's value for n")
        q.add_argument("--reps", type=int, help=reps_help)
        q.add_argument("--seed", type=int)
        q.add_argument("--alpha", type=float)
        q.add_argument("--threads", type=int)
        q.add_argument("--out", help="directory for the CSV and SVG outputs")
        q.add_argument("--no-chart", action="store_true")

    s = sub.add_parser("simulate", help="Monte Carlo coverage study")
    experiment_flags(s, "replicates (default 2000)")
    s.add_argument("--methods", help="comma list of online, classical, m-out-of-n")
    s.add_argument("--m-grid", help="comma list of bootstrap m values (default n)")
    s.add_argument("--boot-draws", type=int)
    s.add_argument("--sigma-floor", type=float)
    s.add_argument("--refits", type=int)
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("compare-bootstrap", help="m-out-of-n sweep against the online interval")
    experiment_flags(b, "replicates (default 500)")
    b.add_argument("--m-grid", help="comma list (default 0.1n, 0.2n, ..., n)")
    b.add_argument("--boot-draws", type=int)
    b.set_defaults(func=cmd_compare_bootstrap)

    r = sub.add_parser("summarize", help="recompute a summary from replicates.csv")
    r.add_argument("replicates")
    r.add_argument("--out")
    r.set_defaults(func=cmd_summarize)

    m = sub.add_parser("permutation", help="online estimates on two orderings of the same data")
    experiment_flags(m, "replicates (default 500)")
    m.add_argument("--identity", action="store_true", help="use the original order twice")
    m.add_argument("--sigma-floor", type=float)
    m.add_argument("--refits", type=int)
    m.set_defaults(func=cmd_permutation)

    l = sub.add_parser("elln", help="online width as the initial chunk size varies")
    l.add_argument("--config")
    l.add_argument("--dgp")
    l.add_argument("--n", type=int)
    l.add_argument("--ells", help="comma list of initial chunk sizes")
    l.add_argument("--reps", type=int)
    l.add_argument("--seed", type=int)
    l.add_argument("--alpha", type=float)
    l.add_argument("--sigma-floor", type=float)
    l.add_argument("--threads", type=int)
    l.set_defaults(func=cmd_elln)
    return p


def run(argv=None, out=None) -> int:
    out = out if out is not None else sys.stdout
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR, format="%(message)s")
        return args.func(args, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (LearnerError, DomainError, FloatingPointError, ZeroDivisionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        # remaining validation failures come from user-supplied settings
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
