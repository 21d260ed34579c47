"""Delimited and tabular output for Monte Carlo runs, plus the readers.

Floats are written with ``repr`` so a replicate dump read back by
:func:`read_replicates` reproduces every value bit for bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import fields

from .harness import MethodResult, MethodSummary, MonteCarloReport, ReplicateRecord

REPLICATE_COLUMNS = (
    "replicate", "dgp", "n", "ell_n", "alpha", "mode", "truth", "data_adaptive_truth",
    "fingerprint", "method", "point", "lower", "upper", "lower_one_sided",
    "covered_truth", "covered_lower", "covered_data_adaptive", "ill_defined", "failed", "error",
)
META_COLUMNS = ("dgp", "n", "ell_n", "alpha", "truth", "mode")
SUMMARY_COLUMNS = META_COLUMNS + tuple(f.name for f in fields(MethodSummary))


class FormatError(ValueError):
    """A report file does not have the expected layout."""


def _cell(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _flag(s: str) -> bool:
    if s not in ("0", "1"):
        raise FormatError(f"expected 0 or 1, got {s!r}")
    return s == "1"


def write_replicates(records, report: MonteCarloReport, stream) -> None:
    """One row per (replicate, method)."""
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(REPLICATE_COLUMNS)
    for rec in sorted(records, key=lambda r: r.index):
        for res in rec.results:
            out.writerow(_cell(x) for x in (
                rec.index, report.dgp, report.n, report.ell_n, report.alpha, report.mode,
                rec.truth, rec.data_adaptive_truth, rec.fingerprint, res.method,
                res.point, res.lower, res.upper, res.lower_one_sided,
                res.covered_truth, res.covered_lower, res.covered_data_adaptive,
                res.ill_defined, res.failed, res.error,
            ))


def read_replicates(stream):
    """Inverse of :func:`write_replicates`: returns ``(meta, records)``."""
    reader = csv.DictReader(stream)
    if tuple(reader.fieldnames or ()) != REPLICATE_COLUMNS:
        raise FormatError(f"unexpected replicate header {reader.fieldnames}")
    meta = None
    rows = {}
    for line, row in enumerate(reader, start=2):
        try:
            row_meta = {
                "dgp": row["dgp"], "n": int(row["n"]), "ell_n": int(row["ell_n"]),
                "alpha": float(row["alpha"]), "mode": row["mode"],
            }
            if meta is None:
                meta = row_meta
            elif row_meta != meta:
                raise FormatError("rows disagree on the experiment settings")
            idx = int(row["replicate"])
            result = MethodResult(
                method=row["method"],
                point=float(row["point"]),
                lower=float(row["lower"]),
                upper=float(row["upper"]),
                lower_one_sided=float(row["lower_one_sided"]),
                covered_truth=_flag(row["covered_truth"]),
                covered_lower=_flag(row["covered_lower"]),
                covered_data_adaptive=_flag(row["covered_data_adaptive"]),
                ill_defined=int(row["ill_defined"]),
                failed=_flag(row["failed"]),
                error=row["error"],
            )
            head = (float(row["truth"]), float(row["data_adaptive_truth"]), row["fingerprint"])
        except (TypeError, ValueError, KeyError) as exc:
            raise FormatError(f"line {line}: {exc}") from None
        if idx in rows and rows[idx][0] != head:
            raise FormatError(f"line {line}: replicate {idx} disagrees with its earlier rows")
        rows.setdefault(idx, (head, []))[1].append(result)
    if meta is None:
        raise FormatError("no replicate rows")
    records = [
        ReplicateRecord(idx, head[0], head[1], head[2], tuple(results))
        for idx, (head, results) in sorted(rows.items())
    ]
    return meta, records


def write_summary(report: MonteCarloReport, stream) -> None:
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(SUMMARY_COLUMNS)
    meta = (report.dgp, report.n, report.ell_n, report.alpha, report.truth, report.mode)
    for summ in report.methods.values():
        out.writerow(_cell(x) for x in meta + tuple(getattr(summ, f.name) for f in fields(MethodSummary)))


def summary_text(report: MonteCarloReport) -> str:
    """Aligned human-readable table (percentages for coverages)."""
    head = (
        f"{report.dgp}  n={report.n}  ell_n={report.ell_n}  alpha={report.alpha:g}  "
        f"optimal value={report.truth:.6f}\nnuisances: {report.mode}\n"
    )
    cols = ("method", "ok", "fail", "cover%", "lower%", "adapt%", "bias", "bias^2", "width")
    rows = []
    for s in report.methods.values():
        rows.append((
            s.method, str(s.replicates), str(s.failures),
            f"{100 * s.coverage:.1f}±{100 * s.coverage_se:.1f}",
            f"{100 * s.lower_coverage:.1f}±{100 * s.lower_coverage_se:.1f}",
            f"{100 * s.adaptive_coverage:.1f}±{100 * s.adaptive_coverage_se:.1f}",
            f"{s.mean_bias:+.5f}±{s.mean_bias_se:.5f}",
            f"{s.squared_bias:.2e}",
            f"{s.mean_width:.5f}±{s.mean_width_se:.5f}",
        ))
    return head + _align(cols, rows)


def _align(cols, rows) -> str:
    widths = [max(len(c), *(len(r[k]) for r in rows)) if rows else len(c) for k, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
    return "\n".join(line.rstrip() for line in lines) + "\n"


def sweep_text(sweep) -> str:
    head = (
        f"{sweep.dgp}  n={sweep.n}  online coverage={100 * sweep.online_coverage:.1f}%  "
        f"online width={sweep.online_width:.5f}\n"
    )
    cols = ("m", "cover%", "width", "ratio", "ill-defined")
    rows = [
        (str(r.m), f"{100 * r.coverage:.1f}±{100 * r.coverage_se:.1f}", f"{r.mean_width:.5f}",
         f"{r.width_ratio:.3f}±{r.width_ratio_se:.3f}", str(r.ill_defined))
        for r in sweep.rows
    ]
    tail = (
        f"oracle m (narrowest with coverage >= {100 * sweep.valid_coverage:.0f}%): "
        f"{sweep.oracle_m if sweep.oracle_m is not None else 'none'}\n"
    )
    return head + _align(cols, rows) + tail


def write_sweep(sweep, stream) -> None:
    out = csv.writer(stream, lineterminator="\n")
    out.writerow(("dgp", "n", "m", "coverage", "coverage_se", "mean_width", "width_ratio",
                  "width_ratio_se", "ill_defined", "online_coverage", "online_width"))
    for r in sweep.rows:
        out.writerow(_cell(x) for x in (
            sweep.dgp, sweep.n, r.m, r.coverage, r.coverage_se, r.mean_width, r.width_ratio,
            r.width_ratio_se, r.ill_defined, sweep.online_coverage, sweep.online_width,
        ))


def to_string(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()
