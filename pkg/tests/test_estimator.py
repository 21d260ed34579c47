import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from optvalue import dgp
from optvalue.dgp import oracle
from optvalue.estimator import (
    BlockFitError,
    ClassicalEstimate,
    OnlineValueEstimate,
    build_chunk_schedule,
    classical_one_step,
    estimate_sigma,
    lower_bound,
    normal_quantile,
    online_one_step,
    two_sided_ci,
)
from optvalue.harness import default_learner
from optvalue.model import Dataset, influence_values
from optvalue.nuisance import FixedLearner, LearnerError, NpmleLearner


def test_schedule_examples():
    s = build_chunk_schedule(1000, 100)
    assert s.blocks == 9 and set(s.block_sizes()) == {100}
    assert build_chunk_schedule(4, 1, 3).boundaries == (1, 2, 3, 4)
    s = build_chunk_schedule(250, 25)
    assert s.blocks == 9 and set(s.block_sizes()) == {25}


@given(st.integers(2, 5000), st.data())
def test_schedule_blocks_are_near_equal(n, data):
    ell = data.draw(st.integers(1, n - 1))
    s = data.draw(st.integers(1, n - ell))
    sched = build_chunk_schedule(n, ell, s)
    sizes = sched.block_sizes()
    assert sched.boundaries[0] == ell and sched.boundaries[-1] == n
    assert len(sizes) == s and max(sizes) - min(sizes) <= 1 and min(sizes) >= 1


@pytest.mark.parametrize("n, ell, s", [(10, 10, None), (10, 0, None), (10, 5, 6), (10, 5, 0)])
def test_schedule_errors(n, ell, s):
    with pytest.raises(ValueError):
        build_chunk_schedule(n, ell, s)


def _constant_model(value):
    t = oracle("c-e")
    return t.nuisance_model().__class__(
        q_bar=lambda a, w: np.full(np.shape(w), value) if np.ndim(w) else value,
        g=t.g0,
        blip=lambda w: np.zeros(np.shape(w)),
        rule=dgp.rule_from_blip(lambda w: np.zeros(np.shape(w))),
    )


def test_sigma_hits_floor_on_constant_terms():
    # a = 1 never follows the all-control rule, so every term equals Q(0, w) = 0.4
    data = Dataset(np.linspace(-1, 1, 10), np.ones(10, dtype=int), np.ones(10), "continuous")
    assert estimate_sigma(_constant_model(0.4), data, floor=1e-3) == pytest.approx(np.sqrt(1e-3), rel=1e-15)


def test_sigma_respects_floor():
    data = dgp.sample("c-e", 200, 1)
    assert estimate_sigma(oracle("c-e").nuisance_model(), data, floor=1.0) >= 1.0


def test_sigma_against_enumerated_variance():
    t = oracle("d-e")
    model = t.nuisance_model()
    moments = [0.0, 0.0]
    for w, a, y in itertools.product(range(4), (0, 1), (0, 1)):
        p = 0.25 * t.g0(a, w) * (t.q_bar0(a, w) if y else 1 - t.q_bar0(a, w))
        d = float(influence_values(model, Dataset([w], [a], [float(y)], "discrete"))[0])
        moments[0] += p * d
        moments[1] += p * d * d
    var = moments[1] - moments[0] ** 2
    sigma = estimate_sigma(model, dgp.sample("d-e", 10_000, 2))
    assert sigma**2 == pytest.approx(var, rel=0.02)


def test_constant_weights_reduce_to_plain_mean():
    data = dgp.sample("c-e", 300, 3)
    learner = FixedLearner(oracle("c-e").nuisance_model())
    sched = build_chunk_schedule(300, 30)
    est = online_one_step(data, sched, learner, sigma_floor=1e6, keep_log=True)
    vals = influence_values(learner.model, data)[30:]
    assert est.psi_hat == pytest.approx(vals.mean(), abs=1e-14)
    assert est.gamma_n == pytest.approx(1e-3, rel=1e-12)
    np.testing.assert_array_equal(est.per_term_log.index, np.arange(31, 301))


def test_discrete_estimate_is_near_truth_for_most_seeds():
    hits = 0
    for seed in range(40):
        try:
            est = online_one_step(dgp.sample("d-e", 4000, (5, seed)), build_chunk_schedule(4000, 100), NpmleLearner())
        except LearnerError:
            continue  # counts as a miss
        hits += abs(est.psi_hat - 0.45) < 0.05
    assert hits >= 38


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["d-e", "c-e", "c-ne"]), st.data())
def test_terms_are_predictable(seed, spec, data):
    n, ell = 100, 40
    base = dgp.sample(spec, n, seed)
    other = dgp.sample(spec, n, seed + 1)
    j = data.draw(st.integers(ell + 1, n))
    s = data.draw(st.integers(1, n - ell))
    spliced = Dataset(
        np.concatenate([base.w[:j], other.w[j:]]),
        np.concatenate([base.a[:j], other.a[j:]]),
        np.concatenate([base.y[:j], other.y[j:]]),
        base.kind,
    )
    sched = build_chunk_schedule(n, ell, s)
    learner = default_learner(spec)
    try:
        x = online_one_step(base, sched, learner, seed=seed, keep_log=True).per_term_log
        z = online_one_step(spliced, sched, learner, seed=seed, keep_log=True).per_term_log
    except LearnerError:
        return
    k = j - ell
    np.testing.assert_array_equal(x.influence[:k], z.influence[:k])
    np.testing.assert_array_equal(x.sigma[:k], z.sigma[:k])


@pytest.mark.parametrize("spec", ["d-e", "c-ne", "c-e"])
def test_estimate_bounds_floor_and_tail(spec):
    floor = 1e-3
    est = online_one_step(
        dgp.sample(spec, 500, 4), build_chunk_schedule(500, 50), default_learner(spec),
        sigma_floor=floor, keep_log=True,
    )
    log = est.per_term_log
    assert log.influence.min() <= est.psi_hat <= log.influence.max()
    assert 1 / log.sigma.max() <= est.gamma_n <= 1 / log.sigma.min()
    assert np.all(log.sigma**2 >= floor)
    # |D| <= 1 / min propensity + 1; estimated propensities stay above 1 / n
    g_min = 0.4 if spec != "d-e" else 1 / 500
    assert np.all(np.abs(log.influence / log.sigma) <= (1 / g_min + 1) / np.sqrt(floor))


def test_runs_are_deterministic():
    data = dgp.sample("c-e", 400, 6)
    args = (data, build_chunk_schedule(400, 40), default_learner("c-e"))
    assert online_one_step(*args, seed=3) == online_one_step(*args, seed=3)


def test_block_failure_names_the_block():
    data = Dataset([0, 0, 1, 1, 0, 1], [1, 1, 1, 0, 0, 0], [1.0] * 6, "discrete")
    with pytest.raises(BlockFitError) as err:
        online_one_step(data, build_chunk_schedule(6, 2, 4), NpmleLearner())
    assert err.value.block == 0


def test_schedule_must_match_data():
    with pytest.raises(ValueError):
        online_one_step(dgp.sample("c-e", 50, 0), build_chunk_schedule(60, 10), default_learner("c-e"))


def test_interval_arithmetic():
    est = OnlineValueEstimate(psi_hat=0.5, gamma_n=2.0, n=1000, ell_n=100)
    lo, hi = two_sided_ci(est, 0.05)
    assert (hi - lo) / 2 == pytest.approx(1.959964 * 0.5 / 30, abs=1e-7)
    assert hi - lo == pytest.approx(2 * 1.959964 / (2.0 * 30), abs=1e-6)
    est1 = OnlineValueEstimate(psi_hat=0.5, gamma_n=1.0, n=200, ell_n=100)
    assert lower_bound(est1, 0.05) == pytest.approx(0.5 - 0.164485, abs=1e-6)
    lo, hi = two_sided_ci(est, 1 - 1e-12)
    assert hi - lo < 1e-12


@given(st.floats(0.001, 0.499))
def test_lower_bound_is_the_two_sided_endpoint(alpha):
    est = OnlineValueEstimate(psi_hat=0.3, gamma_n=1.7, n=500, ell_n=50)
    assert lower_bound(est, alpha) == two_sided_ci(est, 2 * alpha)[0]


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.5])
def test_alpha_validation(alpha):
    est = OnlineValueEstimate(0.3, 1.0, 100, 10)
    with pytest.raises(ValueError):
        two_sided_ci(est, alpha)
    with pytest.raises(ValueError):
        lower_bound(est, 0.5 if alpha == 0.0 else alpha)


@pytest.mark.parametrize("p", [1e-10, 1e-4, 0.025, 0.3, 0.5, 0.95, 0.975, 1 - 1e-8])
def test_normal_quantile_accuracy(p):
    assert normal_quantile(p) == pytest.approx(norm.ppf(p), abs=1e-9)


def test_classical_with_fixed_rule_is_aipw():
    t = oracle("c-ne")
    data = dgp.sample("c-ne", 800, 7)
    est = classical_one_step(data, FixedLearner(t.nuisance_model()))
    d = (t.blip0(data.w) > 0).astype(int)
    aipw = (data.a == d) / t.g0(data.a, data.w) * (data.y - t.q_bar0(data.a, data.w)) + t.q_bar0(d, data.w)
    assert est.psi_hat == pytest.approx(aipw.mean(), abs=1e-14)
    assert est.se == pytest.approx(aipw.std(ddof=1) / np.sqrt(800), rel=1e-12)
    assert isinstance(est, ClassicalEstimate) and est.se >= 0
