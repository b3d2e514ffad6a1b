import numpy as np
import pytest

from spatialfactor import likelihood as lik
from spatialfactor.cli import geweke_problem
from spatialfactor.graph import from_edges, lattice, precision_quadform
from spatialfactor.sampler import SamplerConfig
from spatialfactor.simulate import (SimulationSpec, geweke_test, icar_draw, observe_treatments,
                                    recovery_study, simulate_dataset)


def test_simulation_is_consistent_and_deterministic():
    spec = SimulationSpec(rows=3, cols=3, censored_units=(1, 4), seed=3)
    a = simulate_dataset(spec)
    b = simulate_dataset(spec)
    assert np.array_equal(a.data.deaths, b.data.deaths)
    assert np.array_equal(a.truth.to_vector(), b.truth.to_vector())
    a.truth.check_constraints(1e-12)
    assert abs(a.truth.nu.mean()) < 1e-15
    assert np.isfinite(lik.joint_loglik(a.data, lik.LinkState.from_state(a.truth)))
    cens = a.data.censored
    assert cens[1] and cens[4] and cens.sum() == 2
    lower, true = a.data.treatments_lower, a.true_treatments
    assert np.all(lower[cens] <= true[cens]) and np.all(true[cens] <= lower[cens] + 9)
    assert np.array_equal(lower[~cens], true[~cens])
    c = simulate_dataset(SimulationSpec(rows=3, cols=3, seed=4))
    assert not np.array_equal(a.data.deaths, c.data.deaths)


def test_threshold_censoring_rule():
    spec = SimulationSpec(rows=4, cols=4, censor_threshold=1000, seed=1)
    sim = simulate_dataset(spec)
    assert np.array_equal(sim.data.censored, sim.true_treatments < 1000)
    with pytest.raises(ValueError):
        SimulationSpec(censor_threshold=15)


def test_observe_treatments_floors_censored():
    out = observe_treatments([0, 9, 10, 27, 27], [True, True, True, True, False])
    assert out.tolist() == [0, 0, 10, 20, 27]


def test_icar_draw_moments():
    g = lattice(3, 3)
    rng = np.random.default_rng(0)
    draws = np.array([icar_draw(g, 0.5, rng) for _ in range(20_000)])
    assert np.max(np.abs(draws.mean(axis=1))) < 1e-14
    q = np.array([precision_quadform(g, u) for u in draws])
    assert q.mean() == pytest.approx(8 * 0.5, rel=0.03)
    # covariance matches the pseudo-inverse of Q / variance
    cov = np.cov(draws.T)
    target = 0.5 * np.linalg.pinv(g.dense_precision())
    assert np.max(np.abs(cov - target)) < 0.03


def test_disconnected_graph_rejected():
    g = from_edges([(0, 1), (2, 3)], 4)
    with pytest.raises(ValueError):
        simulate_dataset(SimulationSpec(), graph=g)


def test_vanishing_variances_give_plain_poisson():
    spec = SimulationSpec(rows=20, cols=20, beta=(0.0,), beta0_death=0.2, tau2=1e-12,
                          tau2_death=1e-12, sigma2_death=1e-12, sigma2_treatment=1e-12,
                          population_min=100_000, population_max=100_000, seed=2)
    sim = simulate_dataset(spec)
    e = 100_000 * spec.death_rate
    ratio = sim.data.deaths / e
    se = np.sqrt(np.exp(0.2) / e / ratio.size)
    assert abs(ratio.mean() - np.exp(0.2)) < 3 * se


def test_geweke_identity_kernel_agrees():
    g, template, config = geweke_problem()
    config.blocks = ()
    res = geweke_test(g, template, config, n_samples=2000, n_chains=200, chain_length=10, seed=1)
    assert res.max_abs_z < 4.0


def test_geweke_small_correct_and_mutated():
    g, template, config = geweke_problem()
    ok = geweke_test(g, template, config, n_samples=2000, n_chains=200, chain_length=50, seed=2)
    assert ok.passed
    g, template, bad = geweke_problem({"mutate": "1"})
    res = geweke_test(g, template, bad, n_samples=2000, n_chains=200, chain_length=50, seed=2)
    assert res.max_abs_z > 6.0


def test_recovery_single_replicate_smoke():
    spec = SimulationSpec(rows=3, cols=3, seed=5)
    cfg = SamplerConfig(iterations=600, burn_in=300, thin=3)
    res = recovery_study(spec, cfg, 1)
    table = res.table()
    assert {r["parameter"] for r in table} == {"beta[0]", "beta[1]", "tau2", "tau2_death",
                                               "sigma2_death", "sigma2_treatment"}
    assert all(r["replicates"] == 1 for r in table)
    again = recovery_study(spec, cfg, 1)
    assert res.rows == again.rows


def test_spec_from_file(tmp_path):
    p = tmp_path / "sim.cfg"
    p.write_text("rows = 2\ncols = 4\nbeta = 0.5, -0.2, 0.1\ncensored_units = 1\n"
                 "unknown_key = 3\n")
    spec = SimulationSpec.from_file(str(p))
    assert spec.beta == (0.5, -0.2, 0.1) and spec.censored_units == (1,)
    assert simulate_dataset(spec).data.p == 3
