"""Monte Carlo simulator: streams, intervals and agreement with the closed forms."""

import math

import numpy as np
import pytest
from scipy import stats

from dwlab import simkit, theory
from dwlab.errors import ParameterError
from dwlab.theory import ModelParams


def cfg(q, w, d, n=3, r=1.0, trials=100_000, seed=0, aggregation="task"):
    return simkit.TrialConfig(ModelParams(q=q, w=w, d=d, n_agents=n, r=r, aggregation=aggregation), trials, seed)


def test_block_size_multiple_of_four():
    for w, d, n in [(1, 1, 2), (3, 4, 5), (2, 3, 3)]:
        D = simkit.block_size(ModelParams(q=0.5, w=w, d=d, n_agents=n))
        assert D % 4 == 0 and D >= d * w * (1 + n) + d


def test_philox_advance_matches_skip():
    # the block layout relies on advance(k) skipping exactly 4k doubles
    full = np.random.Generator(np.random.Philox(key=7)).random(40)
    bg = np.random.Philox(key=7)
    bg.advance(3)
    assert np.array_equal(np.random.Generator(bg).random(28), full[12:])


def test_single_trial_is_bernoulli():
    r = simkit.simulate(cfg(0.5, 1, 1, trials=1))
    assert r.single_hat in (0.0, 1.0) and r.multi_hat in (0.0, 1.0)


def test_reproducible():
    c = cfg(0.7, 2, 3, n=3, r=0.9, trials=20_000, seed=11)
    assert simkit.simulate(c) == simkit.simulate(c)


@pytest.mark.parametrize("block", [1, 7, 1000, 50_000])
def test_partition_invariance(block):
    c = cfg(0.7, 2, 3, n=3, r=0.9, trials=20_000, seed=3)
    ref = simkit.count_successes(c)
    assert simkit.count_successes(c, block=block) == ref
    assert simkit.count_successes(c, jobs=4, block=block) == ref


def test_near_certain_agent():
    r = simkit.simulate(cfg(0.999999, 1, 1, trials=10_000))
    # P(single_hat < 0.999) is a binomial tail below 1e-20
    assert stats.binom.cdf(9989, 10_000, 0.999999) < 1e-20
    assert r.single_hat >= 0.999


def test_multi_near_r_when_coverage_certain():
    r = simkit.simulate(cfg(0.999999, 1, 1, n=3, r=0.6, trials=100_000, seed=5))
    assert abs(r.multi_hat - 0.6) < 3 * math.sqrt(0.24 / 100_000)


def test_example_points():
    rep = simkit.compare_to_closed_form(cfg(0.5, 1, 1, trials=100_000, seed=1))
    assert rep.single_pass and rep.multi_pass
    assert rep.multi_expected == pytest.approx(0.875)


def test_tight_example():
    rep = simkit.compare_to_closed_form(cfg(0.9, 2, 3, n=3, r=0.95, trials=200_000, seed=2))
    assert rep.passed


def test_tiny_trials_trivially_pass():
    rep = simkit.compare_to_closed_form(cfg(0.9, 2, 3, n=3, r=0.95, trials=10, seed=2))
    assert rep.passed
    for lo, hi in (rep.single_interval, rep.multi_interval):
        assert (hi - lo) / 2 > 0.2 or hi - lo > 0.4


def test_wald_halfwidth_at_ten_trials():
    assert simkit.normal_halfwidth(0.5, 10) > 0.4


def test_step_aggregation_mutant_is_detected():
    # simulate the per-step aggregator but compare with the per-task closed form
    mutant = cfg(0.9, 2, 3, n=3, r=0.8, trials=200_000, seed=4, aggregation="step")
    rates = simkit.simulate(mutant)
    rep = simkit.compare_rates(rates, mutant.params.with_(aggregation="task"))
    assert rep.single_pass and not rep.multi_pass
    ok = simkit.compare_rates(rates, mutant.params)
    assert ok.multi_pass


def test_empirical_gain_undefined_without_single_success():
    rep = simkit.compare_to_closed_form(cfg(0.05, 6, 4, n=3, r=1.0, trials=100, seed=0))
    assert rep.single_hat == 0.0 and rep.empirical_gain is None
    assert math.isfinite(rep.closed_form_gain)


class TestIntervals:
    def test_clopper_pearson_oracle(self):
        lo, hi = simkit.clopper_pearson(3, 50)
        a = 1 - simkit.CI_CONFIDENCE
        assert lo == pytest.approx(stats.beta.ppf(a / 2, 3, 48))
        assert hi == pytest.approx(stats.beta.ppf(1 - a / 2, 4, 47))

    def test_exact_endpoints(self):
        assert simkit.clopper_pearson(0, 20)[0] == 0.0
        assert simkit.clopper_pearson(20, 20)[1] == 1.0

    def test_auto_switches(self):
        assert simkit.interval(500, 1000, "auto") == simkit.interval(500, 1000, "normal")
        assert simkit.interval(0, 1000, "auto") == simkit.interval(0, 1000, "exact")
        lo, hi = simkit.interval(0, 1000, "auto")
        assert hi > 0  # Wald would collapse to a point

    def test_unknown_method(self):
        with pytest.raises(ParameterError):
            simkit.interval(1, 2, "bogus")


def test_trial_config_validation():
    p = ModelParams(q=0.5, w=1, d=1)
    for trials in (0, 1.5, True):
        with pytest.raises(ParameterError):
            simkit.TrialConfig(p, trials)
    with pytest.raises(ParameterError):
        simkit.TrialConfig(p, 10, seed=-1)


def test_agreement_suite_shape():
    out = simkit.agreement_suite(simkit.canonical_grid(), 2000, seed=0, repeats=2)
    assert out["cells"] == 36 and 0 <= out["agreeing"] <= 36
    assert len(simkit.acceptance_grid()) == 162


@pytest.mark.slow
def test_rates_unbiased_over_seeds():
    # standardized errors over many seeds behave like N(0, 1)
    p = ModelParams(q=0.7, w=2, d=2, n_agents=3, r=0.9)
    z = []
    for seed in range(200):
        r = simkit.simulate(simkit.TrialConfig(p, 20_000, seed))
        m = theory.multi_success(p)
        z.append((r.multi_hat - m) / math.sqrt(m * (1 - m) / 20_000))
    z = np.array(z)
    assert abs(z.mean()) < 4 / math.sqrt(len(z))
    assert 0.7 < z.std() < 1.3
