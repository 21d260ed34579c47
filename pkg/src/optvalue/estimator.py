"""Online one-step estimation of the optimal value and its comparators.

The online estimator walks the data in order. Nuisances are refit at the
boundaries of a :class:`ChunkSchedule`; every observation past the initial
chunk is scored with the fit trained on the observations before its block,
and weighted by the inverse of that fit's estimated standard deviation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .model import Dataset, NuisanceModel, influence_values
from .nuisance import LearnerError
from .rng import as_key

SIGMA_FLOOR = 1e-3

_STD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    """Standard normal quantile (Wichura's AS241 rational approximation)."""
    return _STD_NORMAL.inv_cdf(p)


class BlockFitError(LearnerError):
    """The learner failed on one block of the chunk schedule."""

    def __init__(self, block: int, cause: Exception):
        super().__init__(f"nuisance fit failed on block {block}: {cause}")
        self.block = block


@dataclass(frozen=True)
class ChunkSchedule:
    """Refit points for the online estimator.

    ``boundaries[k]`` is the number of observations the ``k``-th fit is
    trained on; that fit scores observations ``boundaries[k] + 1`` through
    ``boundaries[k + 1]`` (1-based).
    """

    n: int
    ell_n: int
    boundaries: tuple

    @property
    def blocks(self) -> int:
        return len(self.boundaries) - 1

    def block_sizes(self) -> list:
        return [b - a for a, b in zip(self.boundaries, self.boundaries[1:])]


def build_chunk_schedule(n: int, ell_n: int, s: int | None = None) -> ChunkSchedule:
    """Split observations ``ell_n + 1 .. n`` into ``s`` near-equal blocks.

    ``s`` defaults to ``(n - ell_n) / ell_n`` rounded to the nearest integer.
    """
    n, ell_n = int(n), int(ell_n)
    if ell_n < 1:
        raise ValueError(f"ell_n must be at least 1, got {ell_n}")
    if ell_n >= n:
        raise ValueError(f"ell_n ({ell_n}) must be smaller than n ({n})")
    rest = n - ell_n
    if s is None:
        s = max(1, int(round(rest / ell_n)))
    s = int(s)
    if not 1 <= s <= rest:
        raise ValueError(f"number of blocks must be in [1, {rest}], got {s}")
    sizes = np.full(s, rest // s)
    sizes[: rest % s] += 1
    bounds = np.concatenate([[ell_n], ell_n + np.cumsum(sizes)])
    return ChunkSchedule(n, ell_n, tuple(int(b) for b in bounds))


def estimate_sigma(model: NuisanceModel, history: Dataset, floor: float = SIGMA_FLOOR) -> float:
    """sqrt(max(floor, plug-in variance of the influence term over history))."""
    if len(history) == 0:
        raise ValueError("history must be nonempty")
    return _floored_sd(influence_values(model, history), floor)


def _floored_sd(values, floor):
    return float(np.sqrt(max(floor, float(np.var(values)))))


@dataclass(frozen=True)
class TermLog:
    """Per-observation record of the online estimator (1-based indices)."""

    index: np.ndarray
    influence: np.ndarray
    sigma: np.ndarray


@dataclass(frozen=True)
class OnlineValueEstimate:
    psi_hat: float
    gamma_n: float
    n: int
    ell_n: int
    per_term_log: TermLog | None = field(default=None, compare=False, repr=False)

    @property
    def se(self) -> float:
        return 1.0 / (self.gamma_n * np.sqrt(self.n - self.ell_n))


@dataclass(frozen=True)
class ClassicalEstimate:
    psi_hat: float
    se: float
    model: NuisanceModel | None = field(default=None, compare=False, repr=False)


def online_one_step(
    data: Dataset,
    schedule: ChunkSchedule,
    learner,
    sigma_floor: float = SIGMA_FLOOR,
    seed=0,
    keep_log: bool = False,
) -> OnlineValueEstimate:
    """Inverse-standard-deviation weighted online one-step estimate.

    The learner is called once per block with seed key ``(*seed, block)``.
    """
    if schedule.n != len(data):
        raise ValueError(f"schedule is for n={schedule.n} but data has {len(data)} records")
    if not sigma_floor > 0:
        raise ValueError("sigma_floor must be positive")
    key = as_key(seed)
    bounds = schedule.boundaries
    influence = np.empty(schedule.n - schedule.ell_n)
    sigma = np.empty_like(influence)
    for k in range(schedule.blocks):
        start, stop = bounds[k], bounds[k + 1]
        try:
            model = learner.fit(data.prefix(start), seed=(*key, k))
            # history and the block are scored together; the fit only saw the history
            values = influence_values(model, data.prefix(stop))
        except LearnerError as exc:
            raise BlockFitError(k, exc) from exc
        lo, hi = start - schedule.ell_n, stop - schedule.ell_n
        influence[lo:hi] = values[start:]
        sigma[lo:hi] = _floored_sd(values[:start], sigma_floor)
    weights = 1.0 / sigma
    psi = float(np.sum(weights * influence) / np.sum(weights))
    gamma = float(np.mean(weights))
    log = None
    if keep_log:
        log = TermLog(np.arange(schedule.ell_n + 1, schedule.n + 1), influence, sigma)
    return OnlineValueEstimate(psi, gamma, schedule.n, schedule.ell_n, log)


def _check_alpha(alpha, upper=1.0):
    if not 0.0 < alpha < upper:
        raise ValueError(f"alpha must lie in (0, {upper:g}), got {alpha!r}")


def two_sided_ci(est, alpha: float = 0.05) -> tuple:
    """Wald-type interval psi_hat +/- z_{1 - alpha/2} * se."""
    _check_alpha(alpha)
    half = normal_quantile(1.0 - alpha / 2.0) * est.se
    return float(est.psi_hat - half), float(est.psi_hat + half)


def lower_bound(est, alpha: float = 0.05) -> float:
    """One-sided 1 - alpha lower confidence bound psi_hat - z_{1 - alpha} * se."""
    _check_alpha(alpha, 0.5)
    return float(est.psi_hat - normal_quantile(1.0 - alpha) * est.se)


def classical_one_step(data: Dataset, learner, seed=0) -> ClassicalEstimate:
    """One-step estimate with nuisances and rule fit once on all the data."""
    model = learner.fit(data, seed=as_key(seed))
    values = influence_values(model, data)
    n = len(values)
    se = float(np.std(values, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return ClassicalEstimate(float(np.mean(values)), se, model)
