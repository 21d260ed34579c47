"""m-out-of-n bootstrap intervals for the value of an estimated rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernel
from .estimator import classical_one_step
from .model import Dataset, DomainError
from .nuisance import KernelLearner, LearnerError, fold_labels
from .rng import as_key, stream


@dataclass(frozen=True)
class BootstrapConfig:
    m: int
    b: int = 500
    alpha: float = 0.05

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"m must be at least 1, got {self.m}")
        if self.b < 2:
            raise ValueError(f"need at least 2 bootstrap draws, got {self.b}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    lower: float
    upper: float
    m: int
    ill_defined_count: int
    lower_one_sided: float = float("nan")


def default_m_grid(n: int) -> tuple:
    """m = 0.1n, 0.2n, ..., n."""
    return tuple(int(round(n * k / 10)) for k in range(1, 11))


def _generic_resampler(data, learner):
    def value(index, seed):
        try:
            return classical_one_step(data.take(index), learner, seed=seed).psi_hat
        except (LearnerError, DomainError):
            return float("nan")

    return value


def _injected_kernel_resampler(data, learner):
    # known nuisances are evaluated once per original record and gathered
    w = data.w
    q1 = np.asarray(learner.q_bar(1, w), dtype=float)
    q0 = np.asarray(learner.q_bar(0, w), dtype=float)
    g1 = np.asarray(learner.g(1, w), dtype=float)
    hs = np.asarray(learner.grid.candidates)
    folds = learner.grid.folds

    def value(index, seed):
        m = len(index)
        if m < folds:
            return float("nan")
        labels = fold_labels(m, folds, stream(seed))
        psi, _ = _kernel.injected_classical(
            w[index], data.a[index], data.y[index], q1[index], q0[index], g1[index], labels, folds, hs
        )
        return float(psi)

    return value


def resampler(data: Dataset, learner):
    """Callable ``(index, seed) -> value`` giving the classical estimate on a
    resample, or nan when the learner cannot fit it."""
    if isinstance(learner, KernelLearner) and learner.injected and data.kind == "continuous":
        return _injected_kernel_resampler(data, learner)
    return _generic_resampler(data, learner)


def m_out_of_n_ci(
    data: Dataset,
    learner,
    cfg: BootstrapConfig,
    truth_fallback: float | None = None,
    seed=0,
    point: float | None = None,
) -> BootstrapCI:
    """Percentile-of-roots m-out-of-n bootstrap interval.

    Roots are ``sqrt(m) * (psi*_b - point)``; the interval is
    ``[point - q_{1-alpha/2} / sqrt(n), point - q_{alpha/2} / sqrt(n)]``.
    Draws on which the learner fails take ``truth_fallback`` when given and
    are dropped otherwise; either way they are counted.

    Draw ``b`` uses resampling stream ``(*seed, b, 0)`` and learner seed
    ``(*seed, b, 1)``.
    """
    n = len(data)
    if cfg.m > n:
        raise ValueError(f"m ({cfg.m}) exceeds n ({n})")
    key = as_key(seed)
    if point is None:
        point = classical_one_step(data, learner, seed=key).psi_hat
    value = resampler(data, learner)
    stats = np.empty(cfg.b)
    for b in range(cfg.b):
        index = stream(*key, b, 0).integers(0, n, size=cfg.m)
        stats[b] = value(index, (*key, b, 1))
    bad = np.isnan(stats)
    ill = int(bad.sum())
    if truth_fallback is not None:
        stats[bad] = truth_fallback
    else:
        stats = stats[~bad]
    if stats.size < 2:
        raise LearnerError(f"only {stats.size} usable bootstrap draws")
    roots = np.sort(np.sqrt(cfg.m) * (stats - point))
    q_lo, q_hi, q_one = np.quantile(roots, [cfg.alpha / 2, 1 - cfg.alpha / 2, 1 - cfg.alpha])
    scale = np.sqrt(n)
    return BootstrapCI(
        point=float(point),
        lower=float(point - q_hi / scale),
        upper=float(point - q_lo / scale),
        m=cfg.m,
        ill_defined_count=ill,
        lower_one_sided=float(point - q_one / scale),
    )
