"""Static SVG charts for Monte Carlo reports."""

from __future__ import annotations

import matplotlib
from matplotlib.figure import Figure

# fixed ids and no timestamp keep the SVG byte-stable between runs
_SVG_RC = {"svg.hashsalt": "optvalue", "svg.fonttype": "none"}
_META = {"Date": None, "Creator": None}


def _save(fig: Figure, path) -> None:
    with matplotlib.rc_context(_SVG_RC):
        fig.savefig(path, format="svg", metadata=_META, bbox_inches="tight")


def coverage_chart(report, path) -> None:
    """Grouped bars of two-sided, one-sided and data-adaptive coverage with 95% MC error bars."""
    methods = list(report.methods.values())
    kinds = (
        ("two-sided", "coverage", "coverage_se"),
        ("one-sided lower", "lower_coverage", "lower_coverage_se"),
        ("data-adaptive", "adaptive_coverage", "adaptive_coverage_se"),
    )
    fig = Figure(figsize=(1.8 + 1.4 * len(methods), 3.6))
    ax = fig.add_subplot()
    step = 0.8 / len(kinds)
    for k, (label, attr, se_attr) in enumerate(kinds):
        xs = [i - 0.4 + step * (k + 0.5) for i in range(len(methods))]
        ys = [100 * getattr(s, attr) for s in methods]
        err = [196 * getattr(s, se_attr) for s in methods]
        ax.bar(xs, ys, width=step, yerr=err, label=label, capsize=2)
    ax.axhline(100 * (1 - report.alpha), color="k", lw=0.8, ls="--")
    ax.set_xticks(range(len(methods)), [s.method for s in methods], rotation=20, ha="right")
    ax.set_ylabel("coverage (%)")
    ax.set_ylim(min(50.0, ax.get_ylim()[0]), 100.5)
    ax.set_title(f"{report.dgp}, n={report.n}, ell_n={report.ell_n}", fontsize=10)
    ax.legend(fontsize=8, loc="lower left")
    _save(fig, path)


def sweep_chart(sweep, path) -> None:
    """Bootstrap coverage and width relative to the online interval, against m / n."""
    frac = [r.m / sweep.n for r in sweep.rows]
    fig = Figure(figsize=(7.0, 3.2))
    left, right = fig.subplots(1, 2)
    left.errorbar(frac, [100 * r.coverage for r in sweep.rows],
                  yerr=[196 * r.coverage_se for r in sweep.rows], marker="o", capsize=2)
    left.axhline(100 * sweep.online_coverage, color="C1", ls=":", label="online")
    left.axhline(100 * (1 - sweep.report.alpha), color="k", lw=0.8, ls="--")
    left.set_xlabel("m / n")
    left.set_ylabel("coverage (%)")
    left.legend(fontsize=8)
    right.errorbar(frac, [r.width_ratio for r in sweep.rows],
                   yerr=[1.96 * r.width_ratio_se for r in sweep.rows], marker="o", capsize=2)
    right.axhline(1.0, color="k", lw=0.8, ls="--")
    right.set_xlabel("m / n")
    right.set_ylabel("mean width / online mean width")
    fig.suptitle(f"m-out-of-n bootstrap, {sweep.dgp}, n={sweep.n}", fontsize=10)
    _save(fig, path)


def difference_chart(differences, path, title="") -> None:
    """Histogram of paired point-estimate differences."""
    fig = Figure(figsize=(4.5, 3.2))
    ax = fig.add_subplot()
    ax.hist(differences, bins=30)
    ax.set_xlabel("estimate difference between orderings")
    ax.set_ylabel("replicates")
    if title:
        ax.set_title(title, fontsize=10)
    _save(fig, path)
