"""Simulation laws with exact nuisance truths and value functionals.

Three point-treatment laws are provided:

* ``D-E``: four equiprobable strata, exceptional (zero blip on strata 1-3).
* ``C-NE``: uniform covariate on (-1, 1), blip vanishes only at isolated points.
* ``C-E``: uniform covariate on (-1, 1), blip vanishes on [-1/2, 1/3].

Continuous functionals are integrated segment-wise with 64-node
Gauss-Legendre rules. Segments break at the pieces of the outcome regression
and at the decision boundaries of the rule being evaluated, so every
segment integrand is a polynomial of degree at most three and the
quadrature is exact up to rounding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

from .model import Dataset, NuisanceModel, TreatmentRule, rule_from_blip
from .rng import stream

QUADRATURE_NODES = 64
SCAN_POINTS = 10_001
_BISECT_STEPS = 80

_GL_X, _GL_W = np.polynomial.legendre.leggauss(QUADRATURE_NODES)


class DgpSpec(str, enum.Enum):
    DE = "D-E"
    CNE = "C-NE"
    CE = "C-E"

    @classmethod
    def parse(cls, name) -> "DgpSpec":
        if isinstance(name, cls):
            return name
        key = str(name).strip().upper().replace("_", "-")
        for member in cls:
            if member.value == key or member.name == key.replace("-", ""):
                return member
        raise ValueError(f"unknown DGP {name!r}; expected one of d-e, c-ne, c-e")

    @property
    def discrete(self) -> bool:
        return self is DgpSpec.DE

    @property
    def kind(self) -> str:
        return "discrete" if self.discrete else "continuous"


def _propensity(a, w):
    p1 = 0.5 + 0.1 * np.asarray(w, dtype=float)
    return np.where(np.asarray(a) == 1, p1, 1.0 - p1)


def _lift_de(w):
    return 0.2 * (np.asarray(w) == 0)


def _cubic(x):
    # -x^3 + x^2 - x/3 + 1/27 in factored form; the expanded form cancels
    # catastrophically near its triple root at 1/3
    return -((x - 1 / 3) ** 3)


def _lift_cne(w):
    w = np.asarray(w, dtype=float)
    return np.where(w >= 0, _cubic(w), 0.75 * w**3 + w**2 - w / 3 + 1 / 27)


def _lift_ce(w):
    w = np.asarray(w, dtype=float)
    # the shifted cubic at w + 5/6 is -(w + 1/2)^3
    return np.where(w < -0.5, -((w + 0.5) ** 3), np.where(w > 1 / 3, _cubic(w), 0.0))


def _outcome(base, lift):
    def q(a, w):
        return base + np.where(np.asarray(a) == 1, lift(w), 0.0)

    return q


# the blip is the treated-arm lift over a constant control mean
_LIFT = {DgpSpec.DE: _lift_de, DgpSpec.CNE: _lift_cne, DgpSpec.CE: _lift_ce}
_BASE = {DgpSpec.DE: 0.4, DgpSpec.CNE: 0.3, DgpSpec.CE: 0.3}
_Q = {spec: _outcome(_BASE[spec], _LIFT[spec]) for spec in _LIFT}
# interior points where the outcome regression switches formula
_PIECES = {DgpSpec.CNE: (0.0,), DgpSpec.CE: (-0.5, 1 / 3)}
STRATA = (0, 1, 2, 3)


def _scalarize(f):
    def wrapped(*args):
        out = f(*args)
        return float(out) if np.ndim(out) == 0 else out

    return wrapped


@dataclass(frozen=True)
class OracleTruth:
    """Closed-form nuisances and exact functionals of a simulation law."""

    spec: DgpSpec
    q_bar0: Callable
    g0: Callable
    blip0: Callable
    cond_var0: Callable
    optimal_value: float
    zero_blip_set: tuple

    def nuisance_model(self, rule: TreatmentRule | None = None) -> NuisanceModel:
        """Truths as a nuisance bundle; the rule defaults to the optimal one."""
        return NuisanceModel(
            q_bar=self.q_bar0,
            g=self.g0,
            blip=self.blip0,
            rule=rule if rule is not None else rule_from_blip(self.blip0),
        )


def sample(spec, n: int, seed=0) -> Dataset:
    """Draw ``n`` i.i.d. records from the law ``spec``.

    ``seed`` is an int, a key tuple, or a ``numpy.random.Generator``.
    """
    spec = DgpSpec.parse(spec)
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = stream(seed)
    if spec.discrete:
        w = rng.integers(0, 4, size=n)
    else:
        w = rng.uniform(-1.0, 1.0, size=n)
    a = (rng.random(n) < _propensity(1, w)).astype(np.int64)
    y = (rng.random(n) < _Q[spec](a, w)).astype(float)
    return Dataset(w, a, y, spec.kind)


def _segment_integral(f, lo, hi):
    half = 0.5 * (hi - lo)
    return half * float(np.dot(_GL_W, f(half * _GL_X + 0.5 * (hi + lo))))


def decision_breaks(decide, lo=-1.0, hi=1.0, scan=SCAN_POINTS):
    """Points in ``(lo, hi)`` where a 0/1-valued function changes value.

    Changes are detected on a uniform scan and refined by bisection; two
    changes closer than the scan spacing can be missed.
    """
    grid = np.linspace(lo, hi, scan)
    vals = np.asarray(decide(grid))
    idx = np.flatnonzero(vals[1:] != vals[:-1])
    if idx.size == 0:
        return np.empty(0)
    left = grid[idx].copy()
    right = grid[idx + 1].copy()
    left_val = vals[idx]
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (left + right)
        same = np.asarray(decide(mid)) == left_val
        left = np.where(same, mid, left)
        right = np.where(same, right, mid)
        if np.all(right - left <= 4 * np.finfo(float).eps):
            break
    return 0.5 * (left + right)


def _segments(spec, extra=()):
    pts = {-1.0, 1.0, *_PIECES.get(spec, ()), *(float(x) for x in extra)}
    pts = np.array(sorted(p for p in pts if -1.0 <= p <= 1.0))
    return list(zip(pts[:-1], pts[1:]))


def value_of_rule(spec, rule) -> float:
    """Mean outcome under ``rule``: E[Q0(rule(W), W)]."""
    spec = DgpSpec.parse(spec)
    q = _Q[spec]
    decide = rule.decide if isinstance(rule, TreatmentRule) else rule
    if spec.discrete:
        s = np.array(STRATA)
        return float(np.mean(q(np.asarray(decide(s)), s)))
    total = 0.0
    for lo, hi in _segments(spec, decision_breaks(decide)):
        if hi <= lo:
            continue
        d = int(np.asarray(decide(np.array([0.5 * (lo + hi)])))[0])
        total += _segment_integral(lambda w, d=d: q(d, w), lo, hi)
    return 0.5 * total


def indicator_probability(spec, indicator) -> float:
    """P(indicator(W) = 1) for a 0/1-valued function of the covariate."""
    spec = DgpSpec.parse(spec)
    if spec.discrete:
        s = np.array(STRATA)
        return float(np.mean(np.asarray(indicator(s)) != 0))
    total = 0.0
    for lo, hi in _segments(spec, decision_breaks(indicator)):
        if hi > lo and np.asarray(indicator(np.array([0.5 * (lo + hi)])))[0]:
            total += hi - lo
    return 0.5 * total


def margin_probability(spec, t: float) -> float:
    """P(0 < |blip0(W)| <= t)."""
    blip = oracle(spec).blip0

    def inside(w):
        b = np.abs(blip(w))
        return ((b > 0) & (b <= t)).astype(np.int64)

    return indicator_probability(spec, inside)


def _zero_intervals(blip):
    """Maximal intervals of (-1, 1) on which ``blip`` is identically zero."""
    grid = np.linspace(-1.0, 1.0, SCAN_POINTS)
    zero = np.asarray(blip(grid)) == 0
    out = []
    i = 0
    while i < len(grid):
        if not zero[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(grid) and zero[j + 1]:
            j += 1
        if j > i:  # isolated grid hits are not intervals
            lo, hi = grid[i], grid[j]
            is_zero = lambda w: (np.asarray(blip(w)) == 0).astype(np.int64)
            if i > 0:
                lo = decision_breaks(is_zero, grid[i - 1], grid[i], scan=2)[0]
            if j + 1 < len(grid):
                hi = decision_breaks(is_zero, grid[j], grid[j + 1], scan=2)[0]
            out.append((float(lo), float(hi)))
        i = j + 1
    return tuple(out)


@lru_cache(maxsize=None)
def oracle(spec) -> OracleTruth:
    """Exact truths for ``spec``."""
    spec = DgpSpec.parse(spec)
    q = _Q[spec]
    blip0 = _scalarize(_LIFT[spec])
    cond_var0 = _scalarize(lambda a, w: q(a, w) * (1.0 - q(a, w)))
    if spec.discrete:
        zero = tuple(s for s in STRATA if blip0(s) == 0)
    else:
        zero = _zero_intervals(blip0)
    truth = OracleTruth(
        spec=spec,
        q_bar0=_scalarize(q),
        g0=_scalarize(_propensity),
        blip0=blip0,
        cond_var0=cond_var0,
        optimal_value=float("nan"),
        zero_blip_set=zero,
    )
    if spec.discrete:
        value = value_of_rule(spec, rule_from_blip(blip0))
    else:
        # control mean plus the positive part of the blip
        pos = lambda w: np.maximum(blip0(w), 0.0)
        breaks = decision_breaks(lambda w: (blip0(w) > 0).astype(np.int64))
        value = _BASE[spec] + 0.5 * sum(
            _segment_integral(pos, lo, hi) for lo, hi in _segments(spec, breaks) if hi > lo
        )
    return OracleTruth(**{**truth.__dict__, "optimal_value": float(value)})


@dataclass(frozen=True)
class ExceptionalCheck:
    exceptional: bool
    witness: tuple

    def __bool__(self):
        return self.exceptional


def is_exceptional(spec) -> ExceptionalCheck:
    """Whether the law puts positive mass on a zero-blip set with outcome noise.

    The witness lists the offending strata (discrete) or intervals
    (continuous); it is empty for non-exceptional laws.
    """
    truth = oracle(spec)
    if truth.spec.discrete:
        witness = tuple(
            s for s in truth.zero_blip_set if max(truth.cond_var0(0, s), truth.cond_var0(1, s)) > 0
        )
    else:
        witness = []
        for lo, hi in truth.zero_blip_set:
            probe = np.linspace(lo, hi, 101)[1:-1]
            var = np.maximum(truth.cond_var0(0, probe), truth.cond_var0(1, probe))
            if hi > lo and np.all(var > 0):
                witness.append((lo, hi))
        witness = tuple(witness)
    return ExceptionalCheck(bool(witness), witness)
