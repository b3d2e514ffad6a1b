import math

import numpy as np
import pytest

from spatialfactor.conditionals import logdensity_nu
from spatialfactor.graph import lattice, path, precision_quadform
from spatialfactor.sampler import (AdaptiveScale, ModelContext, Sampler, SamplerConfig,
                                   SamplerError, ScaleBank, adapt, chain_rng, init_state,
                                   read_chain, run_chain, update_alpha_sweep, update_eps_sweep,
                                   update_intercepts, update_nu_sweep, write_chain)
from tests.conftest import make_dataset
from tests.test_conditionals import ScriptedRng, random_state


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(iterations=10, burn_in=10)
    with pytest.raises(ValueError):
        SamplerConfig(thin=0)
    with pytest.raises(ValueError):
        SamplerConfig(adapt_target=1.0)
    with pytest.raises(ValueError):
        SamplerConfig(initial_step_sizes={"nu": -1.0})
    with pytest.raises(ValueError):
        SamplerConfig(blocks=("nu", "gamma"))
    with pytest.raises(ValueError):
        SamplerConfig(seed=-1)
    cfg = SamplerConfig(initial_step_sizes={"nu": 0.2})
    assert cfg.initial_step_sizes["alpha"] == 0.1 and cfg.n_saved == 3000


def test_adapt_rule():
    s = AdaptiveScale(log_step=0.0)
    for _ in range(50):
        adapt(s, True)
    assert s.batch_count == 1 and s.step == pytest.approx(math.exp(0.05))
    for _ in range(50):
        adapt(s, False)
    assert s.log_step == pytest.approx(0.0)
    late = AdaptiveScale(log_step=0.0, batch_count=899)
    for _ in range(50):
        adapt(late, False)
    assert late.log_step == pytest.approx(-1 / 30)


def test_scale_bank_matches_scalar_rule(rng):
    bank = ScaleBank(3, 1.0)
    scalars = [AdaptiveScale(0.0) for _ in range(3)]
    for _ in range(500):
        acc = rng.random(3) < np.array([0.1, 0.5, 0.9])
        bank.record(acc, True, 0.44, 50)
        for s, a in zip(scalars, acc):
            adapt(s, bool(a))
    assert np.allclose(bank.log_step, [s.log_step for s in scalars])
    frozen = bank.log_step.copy()
    bank.record(np.ones(3, bool), False, 0.44, 50)
    assert np.array_equal(bank.log_step, frozen)


def test_adaptation_reaches_target_on_normal():
    rng = np.random.default_rng(7)
    s = AdaptiveScale(log_step=math.log(20.0))
    x, acc, total = 0.0, 0, 0
    for t in range(200_000):
        y = x + s.step * rng.standard_normal()
        ok = math.log(rng.random()) < 0.5 * (x * x - y * y)
        if ok:
            x = y
        if t < 100_000:
            adapt(s, ok)
        else:
            acc += ok
            total += 1
    assert abs(acc / total - 0.44) < 0.05


def test_degenerate_steps_leave_state(small_problem, rng):
    g, d = small_problem
    ctx = ModelContext(g, d)
    s = random_state(6, 1, rng)
    t = s.copy()
    r = np.random.default_rng(0)
    update_nu_sweep(t, ctx, ScaleBank(6, 1e-12), r)
    update_alpha_sweep(t, ctx, ScaleBank(6, 1e-12), r)
    update_eps_sweep(t, ctx, ScaleBank(6, 1e-12), r)
    scales = ScaleBank(2, 1e-12)
    update_intercepts(t, ctx, scales, r)
    assert np.allclose(t.to_vector(), s.to_vector(), atol=1e-9, rtol=0)
    assert scales.total_accepted.sum() == 2


def test_recentred_move_is_reversible(small_problem, rng):
    """Forward and reverse log ratios are exact negatives, as symmetric MH requires."""
    g, d = small_problem
    ctx = ModelContext(g, d)
    X = d.covariates
    for i in range(6):
        x = random_state(6, 1, rng)
        delta = rng.normal()
        z = np.zeros(6)
        z[i] = delta
        u = np.full(6, np.inf)
        u[i] = np.finfo(float).tiny
        y = x.copy()
        update_nu_sweep(y, ctx, ScaleBank(6, 1.0), ScriptedRng(z, u))
        back = y.copy()
        update_nu_sweep(back, ctx, ScaleBank(6, 1.0), ScriptedRng(-z, u))
        assert np.allclose(back.nu, x.nu, atol=1e-14)
        fwd = logdensity_nu(y, g, X, d) - logdensity_nu(x, g, X, d)
        rev = logdensity_nu(back, g, X, d) - logdensity_nu(y, g, X, d)
        a_fwd, a_rev = min(1.0, math.exp(fwd)), min(1.0, math.exp(rev))
        assert a_fwd / a_rev == pytest.approx(math.exp(fwd), rel=1e-9)


def test_nan_density_aborts_with_state(small_problem, rng):
    g, d = small_problem
    ctx = ModelContext(g, d)
    s = random_state(6, 1, rng)
    s.eps_death[0] = np.nan
    with pytest.raises(SamplerError) as info:
        update_nu_sweep(s, ctx, ScaleBank(6, 0.1), rng)
    assert info.value.state is not None and "state=" in str(info.value)


def test_disconnected_graph_rejected(rng):
    from spatialfactor.graph import from_edges
    g = from_edges([(0, 1), (2, 3)], 4)
    with pytest.raises(ValueError, match="connected"):
        ModelContext(g, make_dataset(4, rng))


def test_init_state(small_problem):
    g, d = small_problem
    a = init_state(g, d, chain_rng(3, 0))
    b = init_state(g, d, chain_rng(3, 0))
    c = init_state(g, d, chain_rng(3, 1))
    a.check_constraints()
    assert np.array_equal(a.to_vector(), b.to_vector())
    assert not np.array_equal(a.nu, c.nu)
    assert a.tau2 == 1.0 and a.beta0_death == 0.0 and np.all(a.beta == 0)


def test_bookkeeping_and_determinism(small_problem, tmp_path):
    g, d = small_problem
    cfg = SamplerConfig(iterations=31, burn_in=30, thin=1, seed=4)
    res = run_chain(cfg, g, d)
    assert res.samples.shape == (1, 6 + 1 + 24) and res.iterations.tolist() == [31]
    cfg = SamplerConfig(iterations=400, burn_in=200, thin=4, seed=4)
    a, b = run_chain(cfg, g, d), run_chain(cfg, g, d)
    assert np.array_equal(a.samples, b.samples)
    other = run_chain(SamplerConfig(iterations=400, burn_in=200, thin=4, seed=5), g, d)
    assert not np.array_equal(a.samples, other.samples)
    second = run_chain(cfg, g, d, chain_id=1)
    assert not np.array_equal(a.samples, second.samples)
    path_ = tmp_path / "chain.csv"
    write_chain(a, str(path_))
    iters, cols, samples = read_chain(str(path_))
    assert cols == a.columns and np.array_equal(samples, a.samples)
    assert iters.tolist() == list(range(204, 401, 4))


def test_constraints_hold_along_chain(small_problem):
    g, d = small_problem
    res = run_chain(SamplerConfig(iterations=1000, burn_in=500, thin=1, seed=2), g, d)
    assert res.max_abs_nu_mean < 1e-12 and res.max_abs_alpha_mean_dev < 1e-12
    assert np.all(res.samples[:, 3:7] > 0)
    assert set(res.acceptance) == {"nu", "alpha", "eps", "intercepts"}


def _prior_only(block, n_iter, seed):
    g = path(5)
    d = make_dataset(5, np.random.default_rng(seed))
    cfg = SamplerConfig(iterations=n_iter, burn_in=2000, thin=1, seed=seed, blocks=(block,),
                        use_likelihood=False, initial_step_sizes={block: 1.0})
    return g, run_chain(cfg, g, d)


def test_prior_only_alpha_quadform():
    g, res = _prior_only("alpha", 40_000, 1)
    cols = [res.columns.index(f"alpha_death[{i}]") for i in range(5)]
    q = np.array([precision_quadform(g, row, 1.0) for row in res.samples[:, cols]])
    assert abs(q.mean() - 4.0) / 4.0 < 0.08
    assert np.allclose(res.samples[:, cols].mean(axis=1), 1.0, atol=1e-12)


def test_prior_only_eps_variance():
    _, res = _prior_only("eps", 30_000, 2)
    cols = [res.columns.index(f"eps_death[{i}]") for i in range(5)]
    cols += [res.columns.index(f"eps_treatment[{i}]") for i in range(5)]
    assert abs(res.samples[:, cols].var() - 1.0) < 0.05
