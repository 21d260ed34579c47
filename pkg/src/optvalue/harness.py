"""Monte Carlo experiments: coverage, bias and width of the value estimators.

Every replicate ``r`` draws its data from stream ``(seed, r, DATA)`` and
its estimator randomness from sibling streams, so a replicate's record
depends only on the configuration and ``r``. Records are aggregated in
replicate order, which makes reports independent of the worker count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np

from . import rng
from .bootstrap import BootstrapConfig, default_m_grid, m_out_of_n_ci
from .dgp import DgpSpec, STRATA, oracle, sample, value_of_rule
from .estimator import (
    SIGMA_FLOOR,
    build_chunk_schedule,
    classical_one_step,
    lower_bound,
    online_one_step,
    two_sided_ci,
)
from .model import DomainError
from .nuisance import KernelLearner, LearnerError, NpmleLearner

log = logging.getLogger(__name__)

ONLINE = "online"
CLASSICAL = "classical"
M_OUT_OF_N = "m-out-of-n"
METHODS = (ONLINE, CLASSICAL, M_OUT_OF_N)

# (n, ell_n) pairs of the reference simulation design
DESIGN = {
    DgpSpec.DE: {1000: 100, 4000: 100},
    DgpSpec.CNE: {250: 25, 1000: 25, 4000: 100},
    DgpSpec.CE: {250: 25, 1000: 25, 4000: 100},
}

_FINGERPRINT_GRID = np.linspace(-1.0, 1.0, 21)


def default_ell(dgp, n: int) -> int:
    dgp = DgpSpec.parse(dgp)
    try:
        return DESIGN[dgp][n]
    except KeyError:
        raise ValueError(f"no default ell_n for {dgp.value} at n={n}; pass one explicitly") from None


def default_learner(dgp):
    """NPMLE for everything on D-E; on the continuous laws the true outcome
    regression and propensity are injected and only the rule is learned."""
    dgp = DgpSpec.parse(dgp)
    if dgp.discrete:
        return NpmleLearner()
    truth = oracle(dgp)
    return KernelLearner(q_bar=truth.q_bar0, g=truth.g0)


def nuisance_mode(dgp) -> str:
    if DgpSpec.parse(dgp).discrete:
        return "npmle: outcome regression, propensity and rule estimated"
    return "injected: true outcome regression and propensity, kernel-estimated rule"


def default_refits(dgp, n: int, ell_n: int):
    """D-E refits after every observation; continuous laws use (n - ell_n) / ell_n blocks."""
    return n - ell_n if DgpSpec.parse(dgp).discrete else None


@dataclass(frozen=True)
class ExperimentConfig:
    dgp: DgpSpec
    n: int
    ell_n: int
    methods: tuple = (ONLINE, CLASSICAL)
    replicates: int = 2000
    alpha: float = 0.05
    seed: int = 0
    m_grid: tuple | None = None
    boot_draws: int = 500
    sigma_floor: float = SIGMA_FLOOR
    refits: int | None = None
    permutation_check: bool = False
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dgp", DgpSpec.parse(self.dgp))
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ValueError(f"methods must be a nonempty subset of {METHODS}, got {self.methods}")
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 0.5)")
        if self.m_grid is not None:
            grid = tuple(int(m) for m in self.m_grid)
            if not grid or any(not 1 <= m <= self.n for m in grid):
                raise ValueError(f"m_grid entries must lie in [1, {self.n}]")
            object.__setattr__(self, "m_grid", grid)
        self.schedule()  # validates (n, ell_n, refits)

    def schedule(self):
        refits = self.refits if self.refits is not None else default_refits(self.dgp, self.n, self.ell_n)
        return build_chunk_schedule(self.n, self.ell_n, refits)

    def boot_grid(self) -> tuple:
        return self.m_grid if self.m_grid is not None else (self.n,)


@dataclass(frozen=True)
class MethodResult:
    method: str
    point: float
    lower: float
    upper: float
    lower_one_sided: float
    covered_truth: bool
    covered_lower: bool
    covered_data_adaptive: bool
    ill_defined: int = 0
    failed: bool = False
    error: str = ""

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    truth: float
    data_adaptive_truth: float
    fingerprint: str
    results: tuple

    def result(self, method: str) -> MethodResult:
        for res in self.results:
            if res.method == method:
                return res
        raise KeyError(method)


def _scored(method, point, lower, upper, lb, truth, adaptive, ill=0):
    return MethodResult(
        method=method,
        point=float(point),
        lower=float(lower),
        upper=float(upper),
        lower_one_sided=float(lb),
        covered_truth=bool(lower <= truth <= upper),
        covered_lower=bool(truth > lb),
        covered_data_adaptive=bool(lower <= adaptive <= upper),
        ill_defined=ill,
    )


def _failed(method, exc):
    nan = float("nan")
    return MethodResult(method, nan, nan, nan, nan, False, False, False, failed=True, error=str(exc))


def _fingerprint(dgp, rule) -> str:
    grid = np.array(STRATA) if dgp.discrete else _FINGERPRINT_GRID
    return "".join(str(int(d)) for d in np.asarray(rule(grid)))


def run_replicate(cfg: ExperimentConfig, r: int) -> ReplicateRecord:
    truth = oracle(cfg.dgp).optimal_value
    learner = default_learner(cfg.dgp)
    data = sample(cfg.dgp, cfg.n, (cfg.seed, r, rng.DATA))
    results = []

    classical = None
    classical_error = None
    try:
        classical = classical_one_step(data, learner, seed=(cfg.seed, r, rng.CLASSICAL))
    except (LearnerError, DomainError) as exc:
        classical_error = exc
    adaptive, fingerprint = float("nan"), ""
    if classical is not None:
        try:
            adaptive = value_of_rule(cfg.dgp, classical.model.rule)
            fingerprint = _fingerprint(cfg.dgp, classical.model.rule)
        except LearnerError:
            pass  # the rule is undefined on a stratum the sample never visits

    if ONLINE in cfg.methods:
        try:
            est = online_one_step(
                data, cfg.schedule(), learner, cfg.sigma_floor, seed=(cfg.seed, r, rng.ONLINE)
            )
            lo, hi = two_sided_ci(est, cfg.alpha)
            results.append(_scored(ONLINE, est.psi_hat, lo, hi, lower_bound(est, cfg.alpha), truth, adaptive))
        except (LearnerError, DomainError) as exc:
            results.append(_failed(ONLINE, exc))

    if CLASSICAL in cfg.methods:
        if classical is None:
            results.append(_failed(CLASSICAL, classical_error))
        else:
            lo, hi = two_sided_ci(classical, cfg.alpha)
            lb = lower_bound(classical, cfg.alpha)
            results.append(_scored(CLASSICAL, classical.psi_hat, lo, hi, lb, truth, adaptive))

    if M_OUT_OF_N in cfg.methods:
        for m in cfg.boot_grid():
            name = f"{M_OUT_OF_N}@{m}"
            if classical is None:
                results.append(_failed(name, classical_error))
                continue
            try:
                ci = m_out_of_n_ci(
                    data,
                    learner,
                    BootstrapConfig(m=m, b=cfg.boot_draws, alpha=cfg.alpha),
                    truth_fallback=truth,
                    seed=(cfg.seed, r, rng.BOOTSTRAP, m),
                    point=classical.psi_hat,
                )
                results.append(
                    _scored(name, ci.point, ci.lower, ci.upper, ci.lower_one_sided, truth, adaptive, ci.ill_defined_count)
                )
            except (LearnerError, DomainError) as exc:
                results.append(_failed(name, exc))

    return ReplicateRecord(r, truth, float(adaptive), fingerprint, tuple(results))


def _map_replicates(fn, indices, threads: int):
    if threads <= 1:
        return [fn(r) for r in indices]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, indices, chunksize=max(1, len(indices) // (4 * threads))))


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class MethodSummary:
    method: str
    replicates: int
    failures: int
    coverage: float
    coverage_se: float
    lower_coverage: float
    lower_coverage_se: float
    adaptive_coverage: float
    adaptive_coverage_se: float
    mean_bias: float
    mean_bias_se: float
    squared_bias: float
    squared_bias_se: float
    mean_width: float
    mean_width_se: float
    ill_defined: int = 0


@dataclass(frozen=True)
class MonteCarloReport:
    dgp: str
    n: int
    ell_n: int
    alpha: float
    truth: float
    mode: str
    methods: dict = field(default_factory=dict)

    def __getitem__(self, method) -> MethodSummary:
        return self.methods[method]


def _proportion(flags):
    flags = np.asarray(flags, dtype=float)
    if flags.size == 0:
        return float("nan"), float("nan")
    p = float(flags.mean())
    return p, float(np.sqrt(p * (1.0 - p) / flags.size))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return float("nan"), float("nan")
    if not np.all(np.isfinite(x)):
        return float(x.mean()), float("nan")
    se = float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


def summarize_method(method: str, results, truth: float, adaptive) -> MethodSummary:
    ok = [(res, da) for res, da in zip(results, adaptive) if not res.failed]
    good = [res for res, _ in ok]
    cov, cov_se = _proportion([res.covered_truth for res in good])
    low, low_se = _proportion([res.covered_lower for res in good])
    ada, ada_se = _proportion([res.covered_data_adaptive for res, da in ok if np.isfinite(da)])
    bias, bias_se = _mean_se([res.point - truth for res in good])
    width, width_se = _mean_se([res.width for res in good])
    return MethodSummary(
        method=method,
        replicates=len(good),
        failures=len(results) - len(good),
        coverage=cov,
        coverage_se=cov_se,
        lower_coverage=low,
        lower_coverage_se=low_se,
        adaptive_coverage=ada,
        adaptive_coverage_se=ada_se,
        mean_bias=bias,
        mean_bias_se=bias_se,
        squared_bias=bias * bias,
        squared_bias_se=2.0 * abs(bias) * bias_se,
        mean_width=width,
        mean_width_se=width_se,
        ill_defined=sum(res.ill_defined for res in good),
    )


def summarize(records, dgp, n: int, ell_n: int, alpha: float, mode: str | None = None) -> MonteCarloReport:
    """Aggregate replicate records (in replicate order) into a report."""
    records = sorted(records, key=lambda rec: rec.index)
    dgp = DgpSpec.parse(dgp)
    truth = records[0].truth if records else oracle(dgp).optimal_value
    names = []
    for rec in records:
        for res in rec.results:
            if res.method not in names:
                names.append(res.method)
    methods = {}
    for name in names:
        pairs = [(rec.result(name), rec.data_adaptive_truth) for rec in records if any(r.method == name for r in rec.results)]
        methods[name] = summarize_method(name, [p[0] for p in pairs], truth, [p[1] for p in pairs])
    return MonteCarloReport(dgp.value, n, ell_n, alpha, truth, mode or nuisance_mode(dgp), methods)


def run_experiment(cfg: ExperimentConfig):
    """Run every replicate of ``cfg``; returns ``(report, records)``."""
    records = _map_replicates(partial(run_replicate, cfg), range(cfg.replicates), cfg.threads)
    for rec in records:
        for res in rec.results:
            if res.failed:
                log.warning("replicate %d: %s failed: %s", rec.index, res.method, res.error)
    return summarize(records, cfg.dgp, cfg.n, cfg.ell_n, cfg.alpha), records


# ---------------------------------------------------------------------------
# sensitivity studies


@dataclass(frozen=True)
class PermutationReport:
    agreement: float
    agreement_se: float
    coverage: tuple
    differences: np.ndarray = field(repr=False)
    failures: int = 0

    @property
    def difference_sd(self) -> float:
        return float(np.std(self.differences, ddof=1)) if self.differences.size > 1 else float("nan")

    @property
    def mean_abs_difference(self) -> float:
        return float(np.mean(np.abs(self.differences))) if self.differences.size else float("nan")


def _permutation_replicate(cfg: ExperimentConfig, identity: bool, r: int):
    truth = oracle(cfg.dgp).optimal_value
    data = sample(cfg.dgp, cfg.n, (cfg.seed, r, rng.DATA))
    learner = default_learner(cfg.dgp)
    out = []
    for k in range(2):
        order = np.arange(cfg.n) if identity else rng.stream(cfg.seed, r, rng.PERMUTATION, k).permutation(cfg.n)
        try:
            est = online_one_step(
                data.take(order), cfg.schedule(), learner, cfg.sigma_floor, seed=(cfg.seed, r, rng.ONLINE)
            )
        except (LearnerError, DomainError):
            return None
        lo, hi = two_sided_ci(est, cfg.alpha)
        out.append((est.psi_hat, lo <= truth <= hi))
    return out


def permutation_sensitivity(cfg: ExperimentConfig, identity: bool = False) -> PermutationReport:
    """Run the online estimator on two orderings of every replicate's data.

    Agreement is the share of replicates where both or neither interval
    covers the optimal value. ``identity`` keeps the original order twice.
    """
    pairs = _map_replicates(partial(_permutation_replicate, cfg, identity), range(cfg.replicates), cfg.threads)
    good = [p for p in pairs if p is not None]
    first = np.array([p[0][1] for p in good], dtype=bool)
    second = np.array([p[1][1] for p in good], dtype=bool)
    agree, agree_se = _proportion(first == second)
    diffs = np.array([p[0][0] - p[1][0] for p in good])
    return PermutationReport(
        agreement=agree,
        agreement_se=agree_se,
        coverage=(_proportion(first)[0], _proportion(second)[0]),
        differences=diffs,
        failures=len(pairs) - len(good),
    )


@dataclass(frozen=True)
class EllReport:
    ell_values: tuple
    mean_width: tuple
    mean_width_se: tuple
    coverage: tuple
    ratios: tuple  # (ell_a, ell_b, width(ell_b) / width(ell_a), se, sqrt((n - ell_a) / (n - ell_b)))
    failures: int = 0


def _ell_replicate(dgp, n, ell_values, seed, alpha, sigma_floor, r):
    truth = oracle(dgp).optimal_value
    data = sample(dgp, n, (seed, r, rng.DATA))
    learner = default_learner(dgp)
    widths, covers = [], []
    for ell in ell_values:
        sched = build_chunk_schedule(n, ell, default_refits(dgp, n, ell))
        try:
            est = online_one_step(data, sched, learner, sigma_floor, seed=(seed, r, rng.ONLINE))
        except (LearnerError, DomainError):
            return None
        lo, hi = two_sided_ci(est, alpha)
        widths.append(hi - lo)
        covers.append(lo <= truth <= hi)
    return widths, covers


def elln_sensitivity(
    dgp, n: int, ell_values, replicates: int, seed: int = 0, alpha: float = 0.05,
    sigma_floor: float = SIGMA_FLOOR, threads: int = 1,
) -> EllReport:
    """Online interval width as the initial chunk size varies, on shared data."""
    dgp = DgpSpec.parse(dgp)
    ell_values = tuple(int(e) for e in ell_values)
    for ell in ell_values:
        build_chunk_schedule(n, ell)
    fn = partial(_ell_replicate, dgp, n, ell_values, seed, alpha, sigma_floor)
    rows = _map_replicates(fn, range(replicates), threads)
    good = [row for row in rows if row is not None]
    widths = np.array([row[0] for row in good]).reshape(len(good), len(ell_values))
    covers = np.array([row[1] for row in good], dtype=float).reshape(len(good), len(ell_values))
    means, ses = zip(*(_mean_se(widths[:, k]) for k in range(len(ell_values)))) if good else ((), ())
    ratios = []
    for i in range(len(ell_values)):
        for j in range(i + 1, len(ell_values)):
            ratio, se = _ratio_of_means(widths[:, j], widths[:, i])
            expected = float(np.sqrt((n - ell_values[i]) / (n - ell_values[j])))
            ratios.append((ell_values[i], ell_values[j], ratio, se, expected))
    return EllReport(
        ell_values=ell_values,
        mean_width=tuple(means),
        mean_width_se=tuple(ses),
        coverage=tuple(covers.mean(axis=0)) if good else (),
        ratios=tuple(ratios),
        failures=len(rows) - len(good),
    )


def _ratio_of_means(num, den):
    """mean(num) / mean(den) with a paired delta-method standard error."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    ratio = float(num.mean() / den.mean())
    if num.size < 2:
        return ratio, float("nan")
    resid = num - ratio * den
    return ratio, float(np.std(resid, ddof=1) / (np.sqrt(num.size) * den.mean()))


@dataclass(frozen=True)
class SweepRow:
    m: int
    coverage: float
    coverage_se: float
    mean_width: float
    width_ratio: float
    width_ratio_se: float
    ill_defined: int


@dataclass(frozen=True)
class SweepReport:
    dgp: str
    n: int
    online_coverage: float
    online_width: float
    rows: tuple
    oracle_m: int | None
    valid_coverage: float
    report: MonteCarloReport = field(repr=False)
    records: tuple = field(repr=False, default=())


def bootstrap_sweep(
    dgp, n: int, m_grid=None, replicates: int = 500, boot_draws: int = 500,
    ell_n: int | None = None, seed: int = 0, alpha: float = 0.05,
    valid_coverage: float = 0.93, threads: int = 1,
) -> SweepReport:
    """m-out-of-n coverage and width relative to the online interval.

    Every m shares the replicates' data with the online run; widths are
    averaged over replicates where both succeeded. ``oracle_m`` is the m
    with the narrowest mean interval among those covering at least
    ``valid_coverage``.
    """
    dgp = DgpSpec.parse(dgp)
    m_grid = tuple(m_grid) if m_grid is not None else default_m_grid(n)
    if not m_grid:
        raise ValueError("m_grid is empty")
    cfg = ExperimentConfig(
        dgp=dgp, n=n, ell_n=ell_n if ell_n is not None else default_ell(dgp, n),
        methods=(ONLINE, M_OUT_OF_N), replicates=replicates, alpha=alpha, seed=seed,
        m_grid=m_grid, boot_draws=boot_draws, threads=threads,
    )
    report, records = run_experiment(cfg)
    return sweep_from_records(report, records, m_grid, valid_coverage)


def sweep_from_records(report, records, m_grid, valid_coverage=0.93) -> SweepReport:
    rows = []
    for m in m_grid:
        name = f"{M_OUT_OF_N}@{m}"
        both = [
            (rec.result(name), rec.result(ONLINE))
            for rec in records
            if not rec.result(name).failed and not rec.result(ONLINE).failed
        ]
        summ = report[name]
        ratio, ratio_se = _ratio_of_means([b.width for b, _ in both], [o.width for _, o in both])
        rows.append(SweepRow(m, summ.coverage, summ.coverage_se, summ.mean_width, ratio, ratio_se, summ.ill_defined))
    valid = [row for row in rows if row.coverage >= valid_coverage]
    oracle_m = min(valid, key=lambda row: row.mean_width).m if valid else None
    online = report[ONLINE]
    return SweepReport(
        dgp=report.dgp, n=report.n, online_coverage=online.coverage, online_width=online.mean_width,
        rows=tuple(rows), oracle_m=oracle_m, valid_coverage=valid_coverage, report=report,
        records=tuple(records),
    )


def with_threads(cfg: ExperimentConfig, threads: int) -> ExperimentConfig:
    return replace(cfg, threads=threads)
