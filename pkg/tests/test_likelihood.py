import math

import mpmath
import numpy as np
import pytest

from spatialfactor import likelihood as lik
from spatialfactor.data import build_dataset
from tests.conftest import make_dataset


def mp_logpmf(y, mean):
    mpmath.mp.dps = 40
    return mpmath.mpf(y) * mpmath.log(mean) - mean - mpmath.loggamma(y + 1)


def brute_interval(lower, width, mean):
    mpmath.mp.dps = 40
    return mpmath.fsum(mpmath.exp(mp_logpmf(k, mpmath.mpf(mean)))
                       for k in range(lower, lower + width + 1))


def test_logpmf_examples():
    assert lik.poisson_logpmf(0, 1.0) == pytest.approx(-1.0, abs=1e-15)
    assert lik.poisson_logpmf(2, 2.0) == pytest.approx(math.log(2) - 2, abs=1e-14)
    oracle = float(mp_logpmf(57, mpmath.mpf(57)))
    assert abs(lik.poisson_logpmf(57, 57.0) - oracle) < 1e-12


@pytest.mark.parametrize("mean", [0.0, -1.0, 1e-300])
def test_logpmf_rejects_bad_mean(mean):
    with pytest.raises(ValueError):
        lik.poisson_logpmf(1, mean)
    with pytest.raises(ValueError):
        lik.censored_interval_logprob(1, 9, mean)


def test_interval_examples():
    assert lik.censored_interval_logprob(0, 200, 1.0) == pytest.approx(0.0, abs=1e-14)
    expected = math.log(float(brute_interval(3, 9, 5.0)))
    assert lik.censored_interval_logprob(3, 9, 5.0) == pytest.approx(expected, rel=1e-13)
    for lower, mean in [(0, 0.5), (7, 3.2), (120, 80.0)]:
        assert lik.censored_interval_logprob(lower, 0, mean) == pytest.approx(
            lik.poisson_logpmf(lower, mean), rel=1e-14)


def test_interval_tiny_mass_is_accurate():
    # far in the upper tail, where a CDF difference would cancel to zero
    value = lik.censored_interval_logprob(400, 9, 20.0)
    oracle = float(mpmath.log(brute_interval(400, 9, 20.0)))
    assert np.isfinite(value) and value == pytest.approx(oracle, rel=1e-12)


def test_interval_monotone_in_width_and_bounded(rng):
    for _ in range(50):
        lower, mean = int(rng.integers(0, 60)), float(rng.uniform(0.1, 80))
        vals = [lik.censored_interval_logprob(lower, w, mean) for w in range(0, 15)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))
        assert vals[-1] <= 1e-15


def test_joint_loglik_examples():
    d = build_dataset([10, 10], [0, 1], [0, 1], None, [[0.0], [1.0]])
    link = lik.LinkState(-np.log(d.offsets_death), -np.log(d.offsets_treatment))
    # both means equal one: four log pmfs at mean 1
    assert lik.joint_loglik(d, link) == pytest.approx(-4.0, abs=1e-14)


def test_joint_loglik_term_by_term(rng):
    d = make_dataset(2, rng, censored=np.array([False, True]))
    ld, lt = rng.normal(0, 0.2, 2), rng.normal(0, 0.2, 2)
    md, mt = d.offsets_death * np.exp(ld), d.offsets_treatment * np.exp(lt)
    expected = (lik.poisson_logpmf(d.deaths[0], md[0]) + lik.poisson_logpmf(d.deaths[1], md[1])
                + lik.poisson_logpmf(d.treatments_lower[0], mt[0])
                + lik.censored_interval_logprob(d.treatments_lower[1], 9, mt[1]))
    assert lik.joint_loglik(d, lik.LinkState(ld, lt)) == pytest.approx(expected, rel=1e-13)


def test_all_censored_wide_interval_matches_death_terms(rng):
    d = make_dataset(4, rng, censored=np.ones(4, dtype=bool))
    d = type(d)(d.deaths, np.zeros(4, dtype=np.int64), d.censored, d.populations, d.covariates,
                d.covariate_names, d.offsets_death, np.full(4, 0.01), censor_width=200)
    link = lik.LinkState(np.zeros(4), np.zeros(4))
    assert lik.joint_loglik(d, link) == pytest.approx(
        float(np.sum(lik.death_terms(d, link.log_lambda_death))), abs=1e-12)


def test_uncensored_matches_scipy_bivariate_poisson(rng):
    from scipy.stats import poisson
    for n in range(2, 11):
        d = make_dataset(n, rng)
        ld, lt = rng.normal(0, 0.3, n), rng.normal(0, 0.3, n)
        oracle = (poisson.logpmf(d.deaths, d.offsets_death * np.exp(ld)).sum()
                  + poisson.logpmf(d.treatments_lower, d.offsets_treatment * np.exp(lt)).sum())
        assert lik.joint_loglik(d, lik.LinkState(ld, lt)) == pytest.approx(oracle, rel=1e-10)


def test_unit_delta_matches_recompute(rng):
    d = make_dataset(10, rng, censored=np.arange(10) % 3 == 0)
    link = lik.LinkState(rng.normal(0, 0.3, 10), rng.normal(0, 0.3, 10))
    base = lik.joint_loglik(d, link)
    assert lik.unit_loglik_delta(d, link, 4, (link.log_lambda_death[4],
                                              link.log_lambda_treatment[4])) == 0.0
    for i in range(10):
        new = (link.log_lambda_death[i] + rng.normal(0, 0.5),
               link.log_lambda_treatment[i] + rng.normal(0, 0.5))
        ld, lt = link.log_lambda_death.copy(), link.log_lambda_treatment.copy()
        ld[i], lt[i] = new
        full = lik.joint_loglik(d, lik.LinkState(ld, lt)) - base
        assert abs(lik.unit_loglik_delta(d, link, i, new) - full) < 1e-10
    with pytest.raises(IndexError):
        lik.unit_loglik_delta(d, link, 10, (0.0, 0.0))


def test_link_state_from_chain_state(rng):
    from spatialfactor.conditionals import ChainState
    n = 5
    s = ChainState(nu=rng.normal(size=n), alpha_death=rng.normal(1, 0.1, n),
                   eps_death=rng.normal(size=n), eps_treatment=rng.normal(size=n),
                   beta0_death=0.2, beta0_treatment=-0.1, beta=np.zeros(1),
                   tau2=1.0, tau2_death=1.0, sigma2_death=1.0, sigma2_treatment=1.0)
    link = lik.LinkState.from_state(s)
    assert np.array_equal(link.log_lambda_death, 0.2 + s.alpha_death * s.nu + s.eps_death)
    assert np.array_equal(link.log_lambda_treatment, -0.1 + s.nu + s.eps_treatment)
