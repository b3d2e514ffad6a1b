"""Forward simulation and sampler-correctness harnesses.

Censored observations are generated by flooring the true treatment count to
a multiple of ``width + 1``.  The reported interval then always holds the
truth, and ``P(record | lambda)`` equals the interval probability used by
the likelihood.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from functools import lru_cache

import numpy as np

from . import graph as G
from .config import build_dataclass, read_kv
from .conditionals import ChainState, Priors
from .data import CENSOR_WIDTH, Dataset, standardize_covariates
from .diagnostics import summarize
from .graph import AdjacencyGraph, precision_quadform
from .sampler import ModelContext, Sampler, SamplerConfig, run_chain

logger = logging.getLogger(__name__)


@dataclass
class SimulationSpec:
    rows: int = 3
    cols: int = 3
    adjacency: str | None = None
    n_units: int | None = None
    beta: tuple = (0.3, -0.1)
    beta0_death: float = 0.0
    beta0_treatment: float = 0.0
    tau2: float = 0.38
    tau2_death: float = 0.1
    sigma2_death: float = 0.03
    sigma2_treatment: float = 0.09
    population_min: int = 10_000
    population_max: int = 200_000
    death_rate: float = 57e-5
    treatment_rate: float = 563e-5
    censor_threshold: int = 0
    censored_units: tuple = ()
    seed: int = 0

    def __post_init__(self):
        self.beta = tuple(float(b) for b in self.beta)
        self.censored_units = tuple(int(u) for u in self.censored_units)
        if not self.beta:
            raise ValueError("at least one covariate coefficient is required")
        for name in ("tau2", "tau2_death", "sigma2_death", "sigma2_treatment",
                     "death_rate", "treatment_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.population_min <= self.population_max:
            raise ValueError("need 0 < population_min <= population_max")
        if self.censor_threshold % (CENSOR_WIDTH + 1):
            raise ValueError(f"censor_threshold must be a multiple of {CENSOR_WIDTH + 1}")

    def build_graph(self) -> AdjacencyGraph:
        if self.adjacency:
            if self.n_units is None:
                raise ValueError("n_units is required with an adjacency file")
            return G.load_adjacency(self.adjacency, self.n_units)
        return G.lattice(self.rows, self.cols)

    @classmethod
    def from_mapping(cls, kv: dict) -> "SimulationSpec":
        return build_dataclass(cls, kv)

    @classmethod
    def from_file(cls, path: str) -> "SimulationSpec":
        return cls.from_mapping(read_kv(path))


@lru_cache(maxsize=8)
def _icar_basis(g: AdjacencyGraph) -> tuple[np.ndarray, np.ndarray]:
    if not g.is_connected:
        raise ValueError("ICAR simulation needs a connected graph")
    vals, vecs = np.linalg.eigh(g.dense_precision())
    # the single null direction (constant vector) has the smallest eigenvalue
    return vals[1:], vecs[:, 1:]


def icar_draw(g: AdjacencyGraph, variance: float, rng: np.random.Generator) -> np.ndarray:
    """Sum-zero draw with density ∝ exp(-u'Qu / (2 variance)) on the constrained subspace."""
    vals, vecs = _icar_basis(g)
    u = vecs @ (rng.standard_normal(vals.size) * np.sqrt(variance / vals))
    return u - u.mean()


def observe_treatments(true_counts, censored, width: int = CENSOR_WIDTH) -> np.ndarray:
    """Observation record: exact counts, or the interval floor for censored units."""
    true_counts = np.asarray(true_counts, dtype=np.int64)
    floored = (true_counts // (width + 1)) * (width + 1)
    return np.where(censored, floored, true_counts)


def redraw_outcomes(state: ChainState, template: Dataset, rng: np.random.Generator
                    ) -> tuple[Dataset, np.ndarray]:
    """Draw fresh counts given parameters; flags, offsets and design come from ``template``."""
    eta_d = state.beta0_death + state.alpha_death * state.nu + state.eps_death
    eta_t = state.beta0_treatment + state.nu + state.eps_treatment
    deaths = rng.poisson(template.offsets_death * np.exp(eta_d))
    true_t = rng.poisson(template.offsets_treatment * np.exp(eta_t))
    lower = observe_treatments(true_t, template.censored, template.censor_width)
    return template.with_counts(deaths, lower), true_t


@dataclass
class Simulation:
    graph: AdjacencyGraph
    data: Dataset
    truth: ChainState
    true_treatments: np.ndarray
    raw_covariates: np.ndarray


def simulate_dataset(spec: SimulationSpec, rng: np.random.Generator | None = None,
                     graph: AdjacencyGraph | None = None) -> Simulation:
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    g = graph if graph is not None else spec.build_graph()
    n, p = g.n, len(spec.beta)
    populations = rng.integers(spec.population_min, spec.population_max + 1, size=n)
    raw = rng.standard_normal((n, p))
    X, mean, sd = standardize_covariates(raw)
    beta = np.array(spec.beta)
    nu = X @ beta + icar_draw(g, spec.tau2, rng)
    nu -= nu.mean()
    alpha = 1.0 + icar_draw(g, spec.tau2_death, rng)
    alpha = alpha - alpha.mean() + 1.0
    truth = ChainState(
        nu=nu, alpha_death=alpha,
        eps_death=math.sqrt(spec.sigma2_death) * rng.standard_normal(n),
        eps_treatment=math.sqrt(spec.sigma2_treatment) * rng.standard_normal(n),
        beta0_death=spec.beta0_death, beta0_treatment=spec.beta0_treatment, beta=beta,
        tau2=spec.tau2, tau2_death=spec.tau2_death,
        sigma2_death=spec.sigma2_death, sigma2_treatment=spec.sigma2_treatment,
    )
    offsets_d = populations * spec.death_rate
    offsets_t = populations * spec.treatment_rate
    eta_d = truth.beta0_death + truth.alpha_death * truth.nu + truth.eps_death
    eta_t = truth.beta0_treatment + truth.nu + truth.eps_treatment
    deaths = rng.poisson(offsets_d * np.exp(eta_d))
    true_t = rng.poisson(offsets_t * np.exp(eta_t))
    censored = np.zeros(n, dtype=bool)
    censored[list(spec.censored_units)] = True
    if spec.censor_threshold:
        # the threshold is a multiple of the interval length, so the flag is a function
        # of the reported interval and the censoring stays ignorable
        censored |= true_t < spec.censor_threshold
    data = Dataset(
        deaths=deaths.astype(np.int64),
        treatments_lower=observe_treatments(true_t, censored),
        censored=censored, populations=populations.astype(np.int64), covariates=X,
        covariate_names=tuple(f"x{k}" for k in range(p)),
        offsets_death=offsets_d, offsets_treatment=offsets_t,
        covariate_mean=mean, covariate_sd=sd,
    )
    return Simulation(g, data, truth, true_t, raw)


def draw_from_prior(graph: AdjacencyGraph, X, priors: Priors, rng: np.random.Generator
                    ) -> ChainState:
    """Forward draw of every parameter; requires proper priors."""
    if not priors.is_proper:
        raise ValueError("forward simulation needs proper intercept and variance priors")
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    a, b = priors.variance_shape, priors.variance_scale
    beta = math.sqrt(priors.beta_variance) * rng.standard_normal(p)
    b0 = math.sqrt(priors.intercept_variance) * rng.standard_normal(2)
    tau2, tau2_d, s2_d, s2_t = b / rng.gamma(a, size=4)
    nu = X @ beta + icar_draw(graph, tau2, rng)
    alpha = 1.0 + icar_draw(graph, tau2_d, rng)
    return ChainState(
        nu=nu - nu.mean(), alpha_death=alpha - alpha.mean() + 1.0,
        eps_death=math.sqrt(s2_d) * rng.standard_normal(n),
        eps_treatment=math.sqrt(s2_t) * rng.standard_normal(n),
        beta0_death=float(b0[0]), beta0_treatment=float(b0[1]), beta=beta,
        tau2=float(tau2), tau2_death=float(tau2_d), sigma2_death=float(s2_d),
        sigma2_treatment=float(s2_t),
    )


# -- joint-distribution (Geweke) test ------------------------------------------------------

def _redraw_into(state: ChainState, ctx: ModelContext, template: Dataset,
                 rng: np.random.Generator) -> None:
    eta_d = state.beta0_death + state.alpha_death * state.nu + state.eps_death
    eta_t = state.beta0_treatment + state.nu + state.eps_treatment
    deaths = rng.poisson(template.offsets_death * np.exp(eta_d))
    true_t = rng.poisson(template.offsets_treatment * np.exp(eta_t))
    ctx.set_counts(deaths, observe_treatments(true_t, template.censored, template.censor_width))


def geweke_statistic_names(n: int, p: int) -> list[str]:
    base = ChainState.column_names(n, p)
    return [f"mean:{c}" for c in base] + [f"sq:{c}" for c in base] + [
        "nu_quadform", "loglik", "total_deaths", "total_treatments"]


def geweke_statistics(state: ChainState, ctx: ModelContext) -> np.ndarray:
    v = state.to_vector()
    ll_d, ll_t = ctx.unit_terms(state)
    return np.concatenate([v, v * v, [
        precision_quadform(ctx.graph, state.nu),
        float(ll_d.sum() + ll_t.sum()),
        float(ctx.deaths.sum()),
        float(ctx.t_low.sum()),
    ]])


@dataclass
class GewekeResult:
    names: list[str]
    z: np.ndarray
    mean_forward: np.ndarray
    mean_successive: np.ndarray
    ess_successive: np.ndarray
    n_forward: int
    n_chains: int
    chain_length: int
    threshold: float = 4.0

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def passed(self) -> bool:
        return self.max_abs_z < self.threshold

    @property
    def short(self) -> bool:
        """True when the successive-conditional branch is too short for stable z-scores."""
        return self.n_chains < 20 or float(np.min(self.ess_successive)) < 500

    def rows(self) -> list[dict]:
        return [dict(statistic=k, z=float(z), forward_mean=float(a), successive_mean=float(b),
                     successive_ess=float(e))
                for k, z, a, b, e in zip(self.names, self.z, self.mean_forward,
                                         self.mean_successive, self.ess_successive)]


def geweke_test(graph: AdjacencyGraph, template: Dataset, config: SamplerConfig,
                n_samples: int = 5000, n_chains: int = 200, chain_length: int = 50,
                seed: int = 0, threshold: float = 4.0) -> GewekeResult:
    """Compare marginal-conditional and successive-conditional simulators.

    Branch (a) draws ``n_samples`` independent ``(theta, y)`` pairs forward from the
    prior. Branch (b) runs ``n_chains`` independent chains. Each starts from a
    forward draw and alternates one sampler iteration (no adaptation) with a
    data redraw, for ``chain_length`` steps. Starting every chain at
    stationarity keeps branch (b) exact even for a kernel that never moves.
    The standard error of branch (b) uses between-chain variation of the
    chain means. ``template`` supplies offsets, censoring flags and design.
    """
    priors = config.priors
    ctx = ModelContext(graph, template, priors, True, config.variance_shape_offset)
    names = geweke_statistic_names(graph.n, template.p)
    root = np.random.SeedSequence(seed)
    rng_a, rng_b = (np.random.default_rng(s) for s in root.spawn(2))

    stats_a = np.empty((n_samples, len(names)))
    for k in range(n_samples):
        theta = draw_from_prior(graph, ctx.X, priors, rng_a)
        _redraw_into(theta, ctx, template, rng_a)
        stats_a[k] = geweke_statistics(theta, ctx)

    chain_means = np.empty((n_chains, len(names)))
    sum_sq = np.zeros(len(names))
    sampler = Sampler(ctx, config)
    for c in range(n_chains):
        theta = draw_from_prior(graph, ctx.X, priors, rng_b)
        _redraw_into(theta, ctx, template, rng_b)
        acc = np.zeros(len(names))
        for _ in range(chain_length):
            sampler.step(theta, rng_b, adapting=False)
            _redraw_into(theta, ctx, template, rng_b)
            s = geweke_statistics(theta, ctx)
            acc += s
            sum_sq += s * s
        chain_means[c] = acc / chain_length

    total = n_chains * chain_length
    mean_a = stats_a.mean(axis=0)
    var_a = stats_a.var(axis=0, ddof=1)
    mean_b = chain_means.mean(axis=0)
    var_b = np.maximum(sum_sq / total - mean_b**2, 0.0)
    se2_b = chain_means.var(axis=0, ddof=1) / n_chains
    se = np.sqrt(var_a / n_samples + se2_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, (mean_a - mean_b) / se, 0.0)
        ess = np.where(se2_b > 0, var_b / se2_b, float(total))
    return GewekeResult(names, z, mean_a, mean_b, np.minimum(ess, total), n_samples, n_chains,
                        chain_length, threshold)


# -- posterior recovery ----------------------------------------------------------------------

RECOVERY_PARAMS = ("beta", "tau2", "tau2_death", "sigma2_death", "sigma2_treatment")


def _recovery_replicate(args) -> list[dict]:
    spec, config, rep, level = args
    ss = np.random.SeedSequence(spec.seed, spawn_key=(rep,))
    sim_seq, chain_seq = ss.spawn(2)
    sim = simulate_dataset(spec, np.random.default_rng(sim_seq))
    cfg = SamplerConfig(**{**{f.name: getattr(config, f.name) for f in fields(SamplerConfig)},
                           "seed": int(chain_seq.generate_state(1, np.uint64)[0])})
    res = run_chain(cfg, sim.graph, sim.data)
    summary = summarize([res.samples], res.columns, level)
    truth = dict(zip(res.columns, sim.truth.to_vector()))
    rows = []
    for name in res.columns:
        if not (name.startswith("beta[") or name in RECOVERY_PARAMS):
            continue
        s = summary.row(name)
        t = truth[name]
        rows.append(dict(replicate=rep, parameter=name, truth=t, mean=s["mean"], lower=s["lower"],
                         upper=s["upper"], covered=bool(s["lower"] <= t <= s["upper"]),
                         sign_recovered=bool(np.sign(s["mean"]) == np.sign(t))))
    return rows


@dataclass
class RecoveryResult:
    rows: list[dict]
    replicates: int
    level: float

    def table(self) -> list[dict]:
        """Per-parameter coverage count, coverage rate, mean bias and sign recovery."""
        out = []
        params = list(dict.fromkeys(r["parameter"] for r in self.rows))
        for p in params:
            rs = [r for r in self.rows if r["parameter"] == p]
            out.append(dict(
                parameter=p,
                truth=rs[0]["truth"],
                covered=sum(r["covered"] for r in rs),
                coverage=sum(r["covered"] for r in rs) / len(rs),
                mean_bias=float(np.mean([r["mean"] - r["truth"] for r in rs])),
                sign_recovered=sum(r["sign_recovered"] for r in rs),
                replicates=len(rs),
            ))
        return out


def recovery_study(spec: SimulationSpec, config: SamplerConfig, replicates: int,
                   workers: int = 1, level: float = 0.95) -> RecoveryResult:
    """Simulate, fit and score interval coverage for ``replicates`` independent datasets.

    Replicate ``r`` draws from ``SeedSequence(spec.seed, spawn_key=(r,))`` so the
    result does not depend on ``workers``.
    """
    jobs = [(spec, config, r, level) for r in range(replicates)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_recovery_replicate, jobs))
    else:
        parts = [_recovery_replicate(j) for j in jobs]
    return RecoveryResult([row for part in parts for row in part], replicates, level)
