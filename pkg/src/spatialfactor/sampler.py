"""Adaptive Metropolis-within-Gibbs sampler for the common spatial factor model.

One iteration updates, in order: the latent factor (per-unit random walk with
recentering), the death loadings (same, recentred at one), the error pairs,
both intercepts, the factor coefficients (Gibbs) and the four variances
(Gibbs).

Recentering: proposing ``nu*_i -> nu*_i + d`` and recentering moves the
current centred vector along ``d (e_i - 1/n)``, a symmetric random walk inside
the sum-zero subspace. The map is a translation, so the acceptance ratio is
the plain density ratio of the two centred vectors with no Jacobian term.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from . import _kernels as K
from .conditionals import ChainState, Priors, gibbs_beta, gibbs_variance
from .data import Dataset
from .graph import AdjacencyGraph, precision_quadform

logger = logging.getLogger(__name__)

BLOCKS = ("nu", "alpha", "eps", "intercepts", "beta", "variances")
MH_BLOCKS = ("nu", "alpha", "eps", "intercepts")
DEFAULT_STEPS = {"nu": 0.1, "alpha": 0.1, "eps": 0.1, "intercepts": 0.05}


class SamplerError(RuntimeError):
    """Raised when the chain meets a non-finite log density.

    ``state`` holds the offending :class:`ChainState` for inspection.
    """

    def __init__(self, message: str, state: ChainState | None = None):
        super().__init__(message)
        self.state = state


@dataclass
class SamplerConfig:
    iterations: int = 50_000
    burn_in: int = 20_000
    thin: int = 10
    seed: int = 0
    adapt_target: float = 0.44
    adapt_batch: int = 50
    initial_step_sizes: dict = field(default_factory=lambda: dict(DEFAULT_STEPS))
    beta_prior_variance: float = 4.0
    intercept_prior_variance: float | None = None
    variance_prior_shape: float = -0.5
    variance_prior_scale: float = 0.0
    use_likelihood: bool = True
    blocks: tuple = BLOCKS
    # self-test hook: added to every inverse-gamma shape
    variance_shape_offset: float = 0.0

    def __post_init__(self):
        self.blocks = tuple(self.blocks)
        steps = dict(DEFAULT_STEPS)
        steps.update(self.initial_step_sizes or {})
        self.initial_step_sizes = steps
        if self.iterations < 1 or self.thin < 1 or self.burn_in < 0 or self.adapt_batch < 1:
            raise ValueError("iterations, thin, adapt_batch must be positive; burn_in nonnegative")
        if self.burn_in >= self.iterations:
            raise ValueError(f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})")
        if not 0 < self.adapt_target < 1:
            raise ValueError("adapt_target must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        unknown = set(self.blocks) - set(BLOCKS)
        if unknown:
            raise ValueError(f"unknown update blocks {sorted(unknown)}")
        for k, v in steps.items():
            if k not in DEFAULT_STEPS or not v > 0:
                raise ValueError(f"bad initial step size {k}={v}")
        if not self.beta_prior_variance > 0:
            raise ValueError("beta_prior_variance must be positive")

    @property
    def priors(self) -> Priors:
        return Priors(self.beta_prior_variance, self.intercept_prior_variance,
                      self.variance_prior_shape, self.variance_prior_scale)

    @property
    def n_saved(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class AdaptiveScale:
    log_step: float
    accept_count: int = 0
    batch_count: int = 0
    proposals: int = 0

    @property
    def step(self) -> float:
        return math.exp(self.log_step)


def adapt(scale: AdaptiveScale, accepted: bool, target: float = 0.44,
          batch: int = 50) -> AdaptiveScale:
    """Record one proposal; at each batch boundary nudge the log step.

    The nudge is ``min(0.05, b ** -0.5)`` for batch number ``b``: up when the
    batch acceptance rate exceeds ``target``, down otherwise.
    """
    scale.proposals += 1
    scale.accept_count += int(accepted)
    if scale.proposals == batch:
        scale.batch_count += 1
        delta = min(0.05, scale.batch_count ** -0.5)
        rate = scale.accept_count / batch
        scale.log_step += delta if rate > target else -delta
        scale.accept_count = 0
        scale.proposals = 0
    return scale


class ScaleBank:
    """Vectorized :func:`adapt` for a block of independently tuned scales."""

    def __init__(self, size: int, step: float):
        self.log_step = np.full(size, math.log(step))
        self.accept_count = np.zeros(size, dtype=np.int64)
        self.proposals = 0
        self.batch_count = 0
        self.total_accepted = np.zeros(size, dtype=np.int64)
        self.total_proposed = 0

    @property
    def steps(self) -> np.ndarray:
        return np.exp(self.log_step)

    def record(self, accepted: np.ndarray, adapting: bool, target: float, batch: int) -> None:
        self.total_accepted += accepted
        self.total_proposed += 1
        if not adapting:
            return
        self.accept_count += accepted
        self.proposals += 1
        if self.proposals == batch:
            self.batch_count += 1
            delta = min(0.05, self.batch_count ** -0.5)
            self.log_step += np.where(self.accept_count / batch > target, delta, -delta)
            self.accept_count[:] = 0
            self.proposals = 0

    def reset_totals(self) -> None:
        self.total_accepted[:] = 0
        self.total_proposed = 0

    def acceptance_rate(self) -> float:
        if self.total_proposed == 0:
            return float("nan")
        return float(self.total_accepted.sum() / (self.total_proposed * self.log_step.size))


class ModelContext:
    """Graph, data, priors and the flat arrays the compiled kernels read."""

    def __init__(self, graph: AdjacencyGraph, data: Dataset, priors: Priors = Priors(),
                 use_likelihood: bool = True, variance_shape_offset: float = 0.0):
        if data.n != graph.n:
            raise ValueError(f"dataset has {data.n} units, graph has {graph.n}")
        if not graph.is_connected:
            raise ValueError("the adjacency graph must be connected (one sum-zero constraint)")
        self.graph = graph
        self.data = data
        self.priors = priors
        self.use_likelihood = use_likelihood
        self.variance_shape_offset = variance_shape_offset
        self.X = np.ascontiguousarray(data.covariates, dtype=float)
        self.ei = np.ascontiguousarray(graph.edge_list[:, 0])
        self.ej = np.ascontiguousarray(graph.edge_list[:, 1])
        self.set_data(data)

    def set_data(self, data: Dataset) -> None:
        """Swap the outcome record (used when redrawing data in self-tests)."""
        self.data = data
        self.deaths = data.deaths.astype(float)
        self.lg_d = np.array(data.lgamma_deaths, dtype=float)
        self.log_e_d = np.array(data.log_offsets_death, dtype=float)
        self.t_low = data.treatments_lower.astype(np.int64)
        self.lg_t = np.array(data.lgamma_treatments, dtype=float)
        self.log_e_t = np.array(data.log_offsets_treatment, dtype=float)
        self.cens = data.censored.astype(np.bool_)
        self.width = int(data.censor_width)

    def set_counts(self, deaths: np.ndarray, treatments_lower: np.ndarray) -> None:
        """Fast outcome swap that skips building a :class:`Dataset`; ``self.data`` goes stale."""
        self.deaths = deaths.astype(float)
        self.lg_d = gammaln(self.deaths + 1.0)
        self.t_low = treatments_lower.astype(np.int64)
        self.lg_t = gammaln(self.t_low + 1.0)

    @property
    def n(self) -> int:
        return self.graph.n

    def lik_args(self):
        return (self.deaths, self.lg_d, self.log_e_d, self.t_low, self.lg_t,
                self.log_e_t, self.cens, self.width)

    def unit_terms(self, state: ChainState) -> tuple[np.ndarray, np.ndarray]:
        ll_d = np.zeros(self.n)
        ll_t = np.zeros(self.n)
        if self.use_likelihood:
            K.fill_terms(state.nu, state.alpha_death, state.eps_death, state.eps_treatment,
                         state.beta0_death, state.beta0_treatment, *self.lik_args(), ll_d, ll_t)
        return ll_d, ll_t


def _fail(block: str, state: ChainState):
    raise SamplerError(f"non-finite log acceptance ratio in {block} update; "
                       f"state={json.dumps(state.to_vector().tolist())}", state.copy())


def update_nu_sweep(state: ChainState, ctx: ModelContext, scales: ScaleBank,
                    rng: np.random.Generator, adapting: bool = False,
                    target: float = 0.44, batch: int = 50) -> ChainState:
    n = ctx.n
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    accepted = np.zeros(n, dtype=np.bool_)
    ll_d, ll_t = ctx.unit_terms(state)
    xb = ctx.X @ state.beta
    status = K.sweep_nu(state.nu, state.alpha_death, state.eps_death, state.eps_treatment,
                        state.beta0_death, state.beta0_treatment, xb, state.tau2, ctx.ei, ctx.ej,
                        *ctx.lik_args(), ll_d, ll_t, scales.steps, z, log_u, accepted,
                        ctx.use_likelihood)
    if status:
        _fail("nu", state)
    scales.record(accepted, adapting, target, batch)
    return state


def update_alpha_sweep(state: ChainState, ctx: ModelContext, scales: ScaleBank,
                       rng: np.random.Generator, adapting: bool = False,
                       target: float = 0.44, batch: int = 50) -> ChainState:
    n = ctx.n
    z = rng.standard_normal(n)
    log_u = np.log(rng.random(n))
    accepted = np.zeros(n, dtype=np.bool_)
    ll_d, _ = ctx.unit_terms(state)
    status = K.sweep_alpha(state.nu, state.alpha_death, state.eps_death, state.beta0_death,
                           state.tau2_death, ctx.ei, ctx.ej, ctx.deaths, ctx.lg_d, ctx.log_e_d,
                           ll_d, scales.steps, z, log_u, accepted, ctx.use_likelihood)
    if status:
        _fail("alpha", state)
    scales.record(accepted, adapting, target, batch)
    return state


def update_eps_sweep(state: ChainState, ctx: ModelContext, scales: ScaleBank,
                     rng: np.random.Generator, adapting: bool = False,
                     target: float = 0.44, batch: int = 50) -> ChainState:
    """Joint per-unit proposal for both error terms, one accept/reject each."""
    n = ctx.n
    z = rng.standard_normal((2, n))
    log_u = np.log(rng.random(n))
    accepted = np.zeros(n, dtype=np.bool_)
    ll_d, ll_t = ctx.unit_terms(state)
    status = K.sweep_eps(state.nu, state.alpha_death, state.eps_death, state.eps_treatment,
                         state.beta0_death, state.beta0_treatment, state.sigma2_death,
                         state.sigma2_treatment, *ctx.lik_args(), ll_d, ll_t, scales.steps,
                         z[0], z[1], log_u, accepted, ctx.use_likelihood)
    if status:
        _fail("eps", state)
    scales.record(accepted, adapting, target, batch)
    return state


def update_intercepts(state: ChainState, ctx: ModelContext, scales: ScaleBank,
                      rng: np.random.Generator, adapting: bool = False,
                      target: float = 0.44, batch: int = 50) -> ChainState:
    """Random-walk updates of the death then the treatment intercept."""
    z = rng.standard_normal(2)
    log_u = np.log(rng.random(2))
    steps = scales.steps
    accepted = np.zeros(2, dtype=np.bool_)
    ll_d, ll_t = ctx.unit_terms(state)
    buf = np.empty(ctx.n)
    inv_v = 0.0 if ctx.priors.intercept_variance is None else 1.0 / ctx.priors.intercept_variance

    cand = state.beta0_death + steps[0] * z[0]
    dl = 0.0
    if ctx.use_likelihood:
        dl = K.intercept_delta_death(cand, state.nu, state.alpha_death, state.eps_death,
                                     ctx.deaths, ctx.lg_d, ctx.log_e_d, ll_d, buf)
    log_r = dl - 0.5 * inv_v * (cand * cand - state.beta0_death ** 2)
    if math.isnan(log_r):
        _fail("beta0_death", state)
    if log_u[0] < log_r:
        state.beta0_death = float(cand)
        accepted[0] = True

    cand = state.beta0_treatment + steps[1] * z[1]
    dl = 0.0
    if ctx.use_likelihood:
        dl = K.intercept_delta_treatment(cand, state.nu, state.eps_treatment, ctx.t_low, ctx.lg_t,
                                         ctx.log_e_t, ctx.cens, ctx.width, ll_t, buf)
    log_r = dl - 0.5 * inv_v * (cand * cand - state.beta0_treatment ** 2)
    if math.isnan(log_r):
        _fail("beta0_treatment", state)
    if log_u[1] < log_r:
        state.beta0_treatment = float(cand)
        accepted[1] = True
    scales.record(accepted, adapting, target, batch)
    return state


def update_variances(state: ChainState, ctx: ModelContext, rng: np.random.Generator) -> ChainState:
    pr = ctx.priors
    g = ctx.graph
    kw = dict(prior_shape=pr.variance_shape, prior_scale=pr.variance_scale,
              shape_offset=ctx.variance_shape_offset)
    rank = g.precision_rank
    state.tau2 = gibbs_variance(precision_quadform(g, state.nu, ctx.X @ state.beta), rank, rng, **kw)
    state.tau2_death = gibbs_variance(precision_quadform(g, state.alpha_death, 1.0), rank, rng, **kw)
    state.sigma2_death = gibbs_variance(float(state.eps_death @ state.eps_death), ctx.n, rng, **kw)
    state.sigma2_treatment = gibbs_variance(float(state.eps_treatment @ state.eps_treatment),
                                            ctx.n, rng, **kw)
    return state


def init_state(graph: AdjacencyGraph, data: Dataset | None, rng: np.random.Generator,
               p: int | None = None) -> ChainState:
    """Small centred random start: N(0, 0.1^2) draws for nu, alpha - 1 and the errors."""
    n = graph.n
    if p is None:
        p = data.p
    nu = 0.1 * rng.standard_normal(n)
    alpha = 0.1 * rng.standard_normal(n)
    eps_d = 0.1 * rng.standard_normal(n)
    eps_t = 0.1 * rng.standard_normal(n)
    return ChainState(
        nu=nu - nu.mean(), alpha_death=alpha - alpha.mean() + 1.0,
        eps_death=eps_d, eps_treatment=eps_t, beta0_death=0.0, beta0_treatment=0.0,
        beta=np.zeros(p), tau2=1.0, tau2_death=1.0, sigma2_death=1.0, sigma2_treatment=1.0,
    )


def chain_rng(seed: int, chain_id: int = 0) -> np.random.Generator:
    """RNG for chain ``chain_id``: ``SeedSequence(seed, spawn_key=(chain_id,))``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(chain_id,)))


class Sampler:
    """Holds the per-block adaptive scales and performs full iterations."""

    def __init__(self, ctx: ModelContext, config: SamplerConfig):
        self.ctx = ctx
        self.config = config
        n = ctx.n
        steps = config.initial_step_sizes
        self.scales = {
            "nu": ScaleBank(n, steps["nu"]),
            "alpha": ScaleBank(n, steps["alpha"]),
            "eps": ScaleBank(n, steps["eps"]),
            "intercepts": ScaleBank(2, steps["intercepts"]),
        }

    def step(self, state: ChainState, rng: np.random.Generator, adapting: bool) -> ChainState:
        cfg = self.config
        kw = dict(adapting=adapting, target=cfg.adapt_target, batch=cfg.adapt_batch)
        blocks = cfg.blocks
        if "nu" in blocks:
            update_nu_sweep(state, self.ctx, self.scales["nu"], rng, **kw)
        if "alpha" in blocks:
            update_alpha_sweep(state, self.ctx, self.scales["alpha"], rng, **kw)
        if "eps" in blocks:
            update_eps_sweep(state, self.ctx, self.scales["eps"], rng, **kw)
        if "intercepts" in blocks:
            update_intercepts(state, self.ctx, self.scales["intercepts"], rng, **kw)
        if "beta" in blocks:
            state.beta = gibbs_beta(state, self.ctx.graph, self.ctx.X, rng, cfg.beta_prior_variance)
        if "variances" in blocks:
            update_variances(state, self.ctx, rng)
        return state


@dataclass
class ChainResult:
    columns: list[str]
    iterations: np.ndarray
    samples: np.ndarray
    acceptance: dict
    step_sizes: dict
    max_abs_nu_mean: float
    max_abs_alpha_mean_dev: float
    chain_id: int = 0
    seed: int = 0
    final_state: ChainState | None = None

    def report(self) -> dict:
        return {
            "chain_id": self.chain_id,
            "seed": self.seed,
            "saved_draws": int(self.samples.shape[0]),
            "acceptance": self.acceptance,
            "step_sizes": {k: {"min": float(np.min(v)), "mean": float(np.mean(v)),
                               "max": float(np.max(v))} for k, v in self.step_sizes.items()},
            "max_abs_nu_mean": self.max_abs_nu_mean,
            "max_abs_alpha_mean_dev": self.max_abs_alpha_mean_dev,
        }


def run_chain(config: SamplerConfig, graph: AdjacencyGraph, data: Dataset,
              chain_id: int = 0, init: ChainState | None = None) -> ChainResult:
    """Run one chain and return thinned post-burn-in draws plus diagnostics."""
    ctx = ModelContext(graph, data, config.priors, config.use_likelihood,
                       config.variance_shape_offset)
    rng = chain_rng(config.seed, chain_id)
    state = init.copy() if init is not None else init_state(graph, data, rng)
    sampler = Sampler(ctx, config)
    columns = ChainState.column_names(graph.n, data.p)
    samples = np.empty((config.n_saved, len(columns)))
    saved_iters = np.empty(config.n_saved, dtype=np.int64)
    burn_acc: dict = {}
    max_nu = max_alpha = 0.0
    k = 0
    for t in range(1, config.iterations + 1):
        adapting = t <= config.burn_in
        sampler.step(state, rng, adapting)
        max_nu = max(max_nu, abs(state.nu.mean()))
        max_alpha = max(max_alpha, abs(state.alpha_death.mean() - 1.0))
        if t == config.burn_in:
            burn_acc = {b: s.acceptance_rate() for b, s in sampler.scales.items()}
            for s in sampler.scales.values():
                s.reset_totals()
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            vec = state.to_vector()
            if not np.all(np.isfinite(vec)):
                _fail("iteration", state)
            samples[k] = vec
            saved_iters[k] = t
            k += 1
    acceptance = {b: {"burn_in": burn_acc.get(b, float("nan")), "sampling": s.acceptance_rate()}
                  for b, s in sampler.scales.items() if b in config.blocks}
    step_sizes = {b: s.steps.copy() for b, s in sampler.scales.items() if b in config.blocks}
    return ChainResult(columns, saved_iters, samples, acceptance, step_sizes,
                       float(max_nu), float(max_alpha), chain_id, config.seed, state)


def _run_chain_job(args):
    return run_chain(*args)


def run_chains(config: SamplerConfig, graph: AdjacencyGraph, data: Dataset, n_chains: int = 1,
               workers: int = 1) -> list[ChainResult]:
    """Run ``n_chains`` independent chains; output does not depend on ``workers``."""
    jobs = [(config, graph, data, c) for c in range(n_chains)]
    if workers > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_chain_job, jobs))
    return [run_chain(*job) for job in jobs]


def write_chain(result: ChainResult, path: str) -> None:
    """Comma-separated, ``iteration`` first, then parameters in fixed order."""
    data = np.column_stack([result.iterations.astype(float), result.samples])
    fmt = ["%d"] + ["%.17g"] * result.samples.shape[1]
    np.savetxt(path, data, fmt=fmt, delimiter=",", header=",".join(["iteration"] + result.columns),
               comments="")


def read_chain(path: str) -> tuple[np.ndarray, list[str], np.ndarray]:
    """Returns ``(iterations, columns, samples)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "iteration":
        raise ValueError(f"{path}: not a chain file (first column must be 'iteration')")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr[:, 0].astype(np.int64), header[1:], arr[:, 1:]


def write_acceptance_report(results: Sequence[ChainResult], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"chains": [r.report() for r in results]}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def config_dict(config: SamplerConfig) -> dict:
    d = asdict(config)
    d["blocks"] = list(d["blocks"])
    return d
