"""Nuisance learners: stratum-wise NPMLE and Nadaraya-Watson blip estimation.

A learner is any object with ``fit(data, seed) -> NuisanceModel``. ``seed``
is a key tuple (see :mod:`optvalue.rng`) driving any internal randomness
such as cross-validation folds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernel
from .model import Dataset, NuisanceModel, TreatmentRule, rule_from_blip
from .rng import stream


class LearnerError(ValueError):
    """A nuisance fit could not be produced from the supplied data."""


class IllDefinedNpmle(LearnerError):
    """The NPMLE is undefined at a queried stratum (an empty treatment arm)."""

    def __init__(self, stratum, detail="no treated or no control observations"):
        super().__init__(f"ill-defined NPMLE at stratum {stratum!r}: {detail}")
        self.stratum = stratum


# ---------------------------------------------------------------------------
# discrete NPMLE


@dataclass(frozen=True)
class StratumStats:
    n_w: int
    n_treated: int
    mean_y_treated: float
    mean_y_control: float


class NpmleFit:
    """Empirical cell means and treated proportions per stratum."""

    def __init__(self, labels, n_w, n_treated, mean1, mean0):
        self.labels = labels
        self.n_w = n_w
        self.n_treated = n_treated
        self.mean1 = mean1
        self.mean0 = mean0
        self.n = int(n_w.sum())
        self._dense = None
        if len(labels) and labels[0] >= 0 and labels[-1] < 4096:
            self._dense = np.full(int(labels[-1]) + 1, -1, dtype=np.int64)
            self._dense[labels] = np.arange(len(labels))
        for arr in (labels, n_w, n_treated, mean1, mean0):
            arr.flags.writeable = False

    @property
    def strata(self) -> dict:
        return {
            int(s): StratumStats(int(nw), int(nt), float(m1), float(m0))
            for s, nw, nt, m1, m0 in zip(self.labels, self.n_w, self.n_treated, self.mean1, self.mean0)
        }

    def _index(self, w):
        w = np.asarray(w)
        if self._dense is not None:
            # nonnegative small labels: direct table lookup
            inside = (w >= 0) & (w < len(self._dense))
            idx = self._dense[np.where(inside, w, 0)]
            seen = inside & (idx >= 0)
            if not np.all(seen):
                bad = w.ravel()[np.argmin(np.ravel(seen))]
                raise IllDefinedNpmle(int(bad), "stratum not observed")
            return idx
        idx = np.searchsorted(self.labels, w)
        clipped = np.minimum(idx, len(self.labels) - 1)
        seen = (idx < len(self.labels)) & (self.labels[clipped] == w)
        if not np.all(seen):
            bad = np.asarray(w).ravel()[np.argmin(np.ravel(seen))]
            raise IllDefinedNpmle(int(bad), "stratum not observed")
        return clipped

    def q_bar(self, a, w):
        idx = self._index(w)
        out = np.where(np.asarray(a) == 1, self.mean1[idx], self.mean0[idx])
        if np.any(np.isnan(out)):
            bad = np.broadcast_to(np.asarray(w), out.shape).ravel()[np.argmax(np.isnan(out).ravel())]
            raise IllDefinedNpmle(int(bad))
        return float(out) if out.ndim == 0 else out

    def g(self, a, w):
        idx = self._index(w)
        p1 = self.n_treated[idx] / self.n_w[idx]
        out = np.where(np.asarray(a) == 1, p1, 1.0 - p1)
        return float(out) if out.ndim == 0 else out

    def blip(self, w):
        return self.q_bar(1, w) - self.q_bar(0, w)

    def p_w(self, w):
        return self.n_w[self._index(w)] / self.n

    def model(self) -> NuisanceModel:
        return NuisanceModel(q_bar=self.q_bar, g=self.g, blip=self.blip, rule=rule_from_blip(self.blip))

    def plug_in_value(self) -> float:
        """Sum over strata of p(w) * Q(d(w), w) under the fitted rule."""
        d = self.model().rule(self.labels)
        return float(np.sum(self.n_w / self.n * self.q_bar(d, self.labels)))


def fit_npmle(data: Dataset) -> NpmleFit:
    """Nonparametric MLE on discrete data."""
    if data.kind != "discrete":
        raise ValueError("the NPMLE needs a discrete covariate")
    if len(data) == 0:
        raise LearnerError("cannot fit the NPMLE on no data")
    labels, inv = np.unique(data.w, return_inverse=True)
    k = len(labels)
    a = data.a.astype(float)
    n_w = np.bincount(inv, minlength=k)
    n1 = np.bincount(inv, weights=a, minlength=k)
    s1 = np.bincount(inv, weights=a * data.y, minlength=k)
    s0 = np.bincount(inv, weights=(1.0 - a) * data.y, minlength=k)
    n0 = n_w - n1
    with np.errstate(invalid="ignore", divide="ignore"):
        mean1 = np.where(n1 > 0, s1 / n1, np.nan)
        mean0 = np.where(n0 > 0, s0 / n0, np.nan)
    return NpmleFit(labels, n_w, n1.astype(np.int64), mean1, mean0)


@dataclass(frozen=True)
class NpmleLearner:
    """Plug-in NPMLE for outcome regression, propensity and rule."""

    def fit(self, data: Dataset, seed=0) -> NuisanceModel:
        return fit_npmle(data).model()


# ---------------------------------------------------------------------------
# kernel blip


def epanechnikov(u):
    """K(u) = 3/4 (1 - u^2) on |u| <= 1, zero elsewhere."""
    u = np.asarray(u, dtype=float)
    out = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BandwidthGrid:
    candidates: tuple = tuple(round(0.01 * k, 2) for k in range(1, 21))
    folds: int = 10

    def __post_init__(self):
        c = tuple(float(h) for h in self.candidates)
        if not c:
            raise ValueError("bandwidth grid is empty")
        if any(h <= 0 for h in c) or any(b <= a for a, b in zip(c, c[1:])):
            raise ValueError("bandwidths must be positive and strictly increasing")
        if self.folds < 2:
            raise ValueError("need at least two folds")
        object.__setattr__(self, "candidates", c)


class KernelBlipFit:
    """Difference of Epanechnikov-weighted arm means at bandwidth ``h``.

    Where an arm has no training point strictly inside the window, that arm
    is represented by its nearest training point(s), which is the limit of
    the kernel mean as the window grows just past that point.
    """

    def __init__(self, data: Dataset, h: float):
        if not h > 0:
            raise ValueError(f"bandwidth must be positive, got {h!r}")
        if data.kind != "continuous":
            raise ValueError("the kernel blip needs a continuous covariate")
        n1 = int(data.a.sum())
        if n1 == 0 or n1 == len(data):
            raise LearnerError("kernel blip needs both treated and control observations")
        self.h = float(h)
        self.training = data
        self._arms = _kernel.split_arms(data.w, data.a, data.y)

    def arm_means(self, w):
        """Kernel-weighted (treated mean, control mean) at ``w``."""
        q = np.atleast_1d(np.asarray(w, dtype=float))
        m1, m0 = _kernel.predict_arms(*self._arms, q, self.h)
        if np.ndim(w) == 0:
            return float(m1[0]), float(m0[0])
        return m1, m0

    def predict(self, w):
        m1, m0 = self.arm_means(w)
        return m1 - m0

    __call__ = predict


def nw_blip(data: Dataset, h: float) -> KernelBlipFit:
    return KernelBlipFit(data, h)


def fold_labels(n: int, folds: int, rng) -> np.ndarray:
    """Contiguous fold blocks over a seeded shuffle of ``range(n)``."""
    labels = np.empty(n, dtype=np.int64)
    labels[rng.permutation(n)] = np.arange(n) * folds // n
    return labels


def _marginal_standins(data: Dataset):
    p1 = float(np.mean(data.a))
    g = lambda a, w: np.where(np.asarray(a) == 1, p1, 1.0 - p1)
    q = lambda a, w: np.zeros(np.broadcast(np.asarray(a), np.asarray(w)).shape)
    return q, g


def pseudo_outcome(data: Dataset, q_bar, g):
    """Doubly robust blip pseudo-outcome scored by the CV loss."""
    w, a, y = data.w, data.a, data.y
    return (2 * a - 1) / g(a, w) * (y - q_bar(a, w)) + q_bar(1, w) - q_bar(0, w)


def cv_risks(data: Dataset, grid: BandwidthGrid, oracle=None, seed=0) -> np.ndarray:
    """Cross-validated risk of every candidate bandwidth."""
    n = len(data)
    if n < grid.folds:
        raise ValueError(f"need at least {grid.folds} observations for {grid.folds}-fold CV, got {n}")
    q_bar, g = oracle if oracle is not None else _marginal_standins(data)
    pseudo = np.asarray(pseudo_outcome(data, q_bar, g), dtype=float)
    folds = fold_labels(n, grid.folds, stream(seed))
    risk = _kernel.cv_risk(
        data.w, data.a, data.y, pseudo, folds, grid.folds, np.asarray(grid.candidates)
    )
    if np.any(np.isnan(risk)):
        raise LearnerError("a cross-validation training split lacks a treatment arm")
    return risk


def cv_select_bandwidth(data: Dataset, grid: BandwidthGrid = BandwidthGrid(), oracle=None, seed=0) -> float:
    """Candidate bandwidth with the smallest cross-validated risk.

    ``oracle`` is a ``(q_bar, g)`` pair used inside the loss; without it the
    loss falls back to a zero outcome regression and the marginal treated
    proportion. Ties go to the smaller bandwidth.
    """
    if len(grid.candidates) == 1:
        if len(data) < grid.folds:
            raise ValueError(f"need at least {grid.folds} observations for {grid.folds}-fold CV")
        return grid.candidates[0]
    risk = cv_risks(data, grid, oracle, seed)
    return grid.candidates[int(np.argmin(risk))]


@dataclass(frozen=True)
class KernelLearner:
    """Rule from a CV-tuned Nadaraya-Watson blip.

    With ``q_bar`` and ``g`` supplied, those are used both inside the CV loss
    and in the returned model, so only the rule is learned. Without them the
    returned model carries the kernel arm means as outcome regression and the
    marginal treated proportion as propensity.
    """

    grid: BandwidthGrid = field(default_factory=BandwidthGrid)
    q_bar: Callable | None = None
    g: Callable | None = None

    @property
    def injected(self) -> bool:
        return self.q_bar is not None and self.g is not None

    def fit_blip(self, data: Dataset, seed=0) -> KernelBlipFit:
        oracle = (self.q_bar, self.g) if self.injected else None
        h = cv_select_bandwidth(data, self.grid, oracle, seed)
        return nw_blip(data, h)

    def fit(self, data: Dataset, seed=0) -> NuisanceModel:
        fit = self.fit_blip(data, seed)
        rule = rule_from_blip(fit.predict)
        if self.injected:
            return NuisanceModel(q_bar=self.q_bar, g=self.g, blip=fit.predict, rule=rule)
        _, g = _marginal_standins(data)

        def q_bar(a, w):
            m1, m0 = fit.arm_means(w)
            out = np.where(np.asarray(a) == 1, m1, m0)
            return float(out) if out.ndim == 0 else out

        return NuisanceModel(q_bar=q_bar, g=g, blip=fit.predict, rule=rule)


@dataclass(frozen=True)
class FixedLearner:
    """Returns the same nuisance bundle whatever the data (e.g. known truths)."""

    model: NuisanceModel

    def fit(self, data: Dataset, seed=0) -> NuisanceModel:
        return self.model
