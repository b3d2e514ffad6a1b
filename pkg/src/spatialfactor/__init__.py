"""Bayesian common spatial factor model for bivariate areal counts.

Two Poisson outcomes share an intrinsic-CAR latent factor with spatially
varying loadings. The sampler is adaptive Metropolis-within-Gibbs, and some
treatment counts may be interval-censored.
"""
__version__ = "0.1.0"

from .conditionals import ChainState, Priors
from .data import Dataset, build_dataset, compute_offsets, load_dataset, standardize_covariates
from .diagnostics import PosteriorSummary, per_unit_rates, rescale_loadings, summarize
from .estimator import SpatialFactorModel
from .graph import AdjacencyGraph, from_edges, lattice, load_adjacency, path
from .sampler import SamplerConfig, run_chain, run_chains
from .simulate import SimulationSpec, geweke_test, recovery_study, simulate_dataset

__all__ = [
    "AdjacencyGraph", "ChainState", "Dataset", "PosteriorSummary", "Priors", "SamplerConfig",
    "SimulationSpec", "SpatialFactorModel", "build_dataset", "compute_offsets", "from_edges",
    "geweke_test", "lattice", "load_adjacency", "load_dataset", "path", "per_unit_rates",
    "recovery_study", "rescale_loadings", "run_chain", "run_chains", "simulate_dataset",
    "standardize_covariates", "summarize",
]
