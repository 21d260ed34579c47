"""Core record types, treatment rules and the uncentered influence term."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator, Literal

import numpy as np

CovariateKind = Literal["discrete", "continuous"]

PROPENSITY_FLOOR = 1e-6


class DomainError(ValueError):
    """An observation falls outside the domain where a quantity is defined."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


@dataclass(frozen=True)
class Observation:
    """A single ``(w, a, y)`` record."""

    w: int | float
    a: int
    y: float

    def __post_init__(self):
        if self.a not in (0, 1):
            raise ValueError(f"treatment must be 0 or 1, got {self.a!r}")
        if not np.isfinite(self.y):
            raise ValueError(f"outcome must be finite, got {self.y!r}")


class Dataset:
    """Ordered, immutable collection of observations stored column-wise.

    Order matters: the online estimator visits records in the stored order.

    Parameters
    ----------
    w, a, y : array-like
        Covariate, treatment and outcome columns of equal length.
    kind : {"discrete", "continuous"}
        Discrete covariates are integer stratum labels, continuous ones reals.
    """

    __slots__ = ("w", "a", "y", "kind")

    def __init__(self, w, a, y, kind: CovariateKind):
        if kind not in ("discrete", "continuous"):
            raise ValueError(f"unknown covariate kind {kind!r}")
        w = np.asarray(w)
        a = np.asarray(a)
        y = np.asarray(y, dtype=float)
        if not (w.ndim == a.ndim == y.ndim == 1) or not (len(w) == len(a) == len(y)):
            raise ValueError("w, a and y must be 1-d columns of equal length")
        if kind == "discrete":
            if w.size and not np.all(np.equal(np.mod(w, 1), 0)):
                raise ValueError("discrete covariates must be integer labels")
            w = w.astype(np.int64)
        else:
            w = w.astype(float)
            if not np.all(np.isfinite(w)):
                raise ValueError("continuous covariates must be finite")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("treatment must be binary")
        if not np.all(np.isfinite(y)):
            raise ValueError("outcomes must be finite")
        a = a.astype(np.int64)
        for col in (w, a, y):
            col.flags.writeable = False
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "kind", kind)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def from_records(cls, records, kind: CovariateKind) -> "Dataset":
        records = list(records)
        return cls(
            [r.w for r in records], [r.a for r in records], [r.y for r in records], kind
        )

    def __len__(self):
        return len(self.y)

    def __iter__(self) -> Iterator[Observation]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i) -> Observation:
        w = self.w[i]
        return Observation(int(w) if self.kind == "discrete" else float(w), int(self.a[i]), float(self.y[i]))

    def prefix(self, n: int) -> "Dataset":
        """The first ``n`` observations."""
        return Dataset(self.w[:n], self.a[:n], self.y[:n], self.kind)

    def take(self, index) -> "Dataset":
        """Observations at ``index`` in the given order (repeats allowed)."""
        index = np.asarray(index)
        return Dataset(self.w[index], self.a[index], self.y[index], self.kind)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
        )

    def __repr__(self):
        return f"Dataset(n={len(self)}, kind={self.kind!r})"


@dataclass(frozen=True)
class TreatmentRule:
    """Deterministic map from covariate values to a treatment in {0, 1}.

    ``decide`` must accept scalars and arrays and return integers.
    """

    decide: Callable

    def __call__(self, w):
        return self.decide(w)


def rule_from_blip(blip: Callable) -> TreatmentRule:
    """Treat exactly where the blip is strictly positive; ties get control."""

    def decide(w):
        b = blip(w)
        return (np.asarray(b) > 0).astype(np.int64) if np.ndim(b) else int(b > 0)

    return TreatmentRule(decide)


@dataclass(frozen=True)
class NuisanceModel:
    """Outcome regression, treatment mechanism, blip and the rule it induces.

    ``q_bar(a, w)`` and ``g(a, w)`` broadcast over arrays; ``g(a, w)`` is the
    probability of receiving treatment ``a`` given ``w``. For plug-in fits the
    blip equals ``q_bar(1, w) - q_bar(0, w)``; when outcome regression and
    propensity are injected truths while the rule is learned, ``blip`` is the
    learned contrast behind ``rule``.
    """

    q_bar: Callable
    g: Callable
    blip: Callable
    rule: TreatmentRule


def influence_values(model: NuisanceModel, data: Dataset, floor: float = PROPENSITY_FLOOR):
    """Vectorized uncentered influence term over every record of ``data``.

    Computes ``I(a = d(w)) / g(a|w) * (y - Q(a, w)) + Q(d(w), w)``.
    """
    w, a, y = data.w, data.a, data.y
    d = np.asarray(model.rule(w), dtype=np.int64)
    follow = a == d
    q_d = np.asarray(model.q_bar(d, w), dtype=float)
    out = q_d.copy()
    if np.any(follow):
        wf, af = w[follow], a[follow]
        g = np.asarray(model.g(af, wf), dtype=float)
        if np.any(~(g > floor)):
            bad = int(np.flatnonzero(follow)[np.argmax(~(g > floor))])
            raise DomainError(
                f"propensity {model.g(a[bad], w[bad]):.3g} at or below floor {floor:g} "
                f"for observation {bad} (w={w[bad]}, a={a[bad]})",
                index=bad,
            )
        # residual uses Q at the observed arm, which equals d on this subset
        out[follow] += (y[follow] - q_d[follow]) / g
    return out


def influence_term(model: NuisanceModel, o: Observation, floor: float = PROPENSITY_FLOOR) -> float:
    """Uncentered influence value of a single observation."""
    d = int(model.rule(o.w))
    q_d = float(model.q_bar(d, o.w))
    if o.a != d:
        return q_d
    g = float(model.g(o.a, o.w))
    if not g > floor:
        raise DomainError(
            f"propensity {g:.3g} at or below floor {floor:g} for observation {o}"
        )
    return (o.y - float(model.q_bar(o.a, o.w))) / g + q_d
