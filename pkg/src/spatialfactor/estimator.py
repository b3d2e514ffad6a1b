"""scikit-learn style front end for the spatial factor sampler."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import build_dataset
from .diagnostics import per_unit_rates, rescale_loadings, summarize
from .graph import AdjacencyGraph, from_edges
from .sampler import SamplerConfig, run_chains


class SpatialFactorModel(BaseEstimator):
    """Common spatial factor model fitted by adaptive Metropolis-within-Gibbs.

    Rows of ``X`` and ``y`` are areal units in the order used by ``adjacency``.
    ``X`` holds raw covariates for the latent factor mean; it is standardized
    internally. ``y`` has two columns, deaths and treatment counts. For a
    censored unit the treatment column is the lower bound of a width-9 interval.

    Because the spatial effects belong to fixed units, ``predict`` and
    ``transform`` are in-sample only and require the fitted number of rows.

    Parameters
    ----------
    adjacency : AdjacencyGraph or array-like of shape (m, 2)
        Neighbour structure; edge arrays use 0-based unit indices.
    n_iter, burn_in, thin : int
        Chain length, adaptation/burn-in length and thinning interval.
    n_chains : int
        Independent chains; split R-hat needs at least two.
    random_state : int or None
        Top-level seed. Chain ``c`` derives its stream from ``(random_state, c)``.
    """

    def __init__(self, adjacency=None, n_iter=50_000, burn_in=20_000, thin=10, n_chains=1,
                 random_state=0, adapt_target=0.44, adapt_batch=50, beta_prior_variance=4.0,
                 level=0.95, n_jobs=1):
        self.adjacency = adjacency
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.n_chains = n_chains
        self.random_state = random_state
        self.adapt_target = adapt_target
        self.adapt_batch = adapt_batch
        self.beta_prior_variance = beta_prior_variance
        self.level = level
        self.n_jobs = n_jobs

    def _graph(self, n: int) -> AdjacencyGraph:
        if isinstance(self.adjacency, AdjacencyGraph):
            if self.adjacency.n != n:
                raise ValueError(f"adjacency has {self.adjacency.n} units, X has {n} rows")
            return self.adjacency
        if self.adjacency is None:
            raise ValueError("adjacency is required")
        edges = check_array(self.adjacency, dtype=np.int64)
        if edges.shape[1] != 2:
            raise ValueError("adjacency edge array must have shape (m, 2)")
        return from_edges(map(tuple, edges), n)

    def fit(self, X, y, population, censored=None):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        y = np.asarray(y)
        if y.ndim != 2 or y.shape[1] != 2:
            raise ValueError("y must have two columns: deaths and treatment counts")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("counts must be nonnegative integers")
        population = check_array(population, ensure_2d=False, dtype=None)
        if population.shape != (X.shape[0],):
            raise ValueError("population must have one entry per row of X")
        if censored is not None:
            censored = check_array(censored, ensure_2d=False, dtype=None).astype(bool)
        graph = self._graph(X.shape[0])
        data = build_dataset(population, y[:, 0].astype(np.int64), y[:, 1].astype(np.int64),
                             censored, X)
        seed = self.random_state
        if seed is None:
            seed = int(np.random.SeedSequence().generate_state(1, np.uint64)[0])
        config = SamplerConfig(iterations=self.n_iter, burn_in=self.burn_in, thin=self.thin,
                               seed=int(seed), adapt_target=self.adapt_target,
                               adapt_batch=self.adapt_batch,
                               beta_prior_variance=self.beta_prior_variance)
        results = run_chains(config, graph, data, self.n_chains, self.n_jobs)

        self.columns_ = results[0].columns
        self.chains_ = [r.samples for r in results]
        self.acceptance_ = [r.acceptance for r in results]
        self.summary_ = summarize(self.chains_, self.columns_, self.level)
        self.data_ = data
        self.n_features_in_ = X.shape[1]
        self.n_units_ = X.shape[0]

        mean = dict(zip(self.columns_, self.summary_.mean))
        n, p = self.n_units_, self.n_features_in_
        self.coef_ = np.array([mean[f"beta[{k}]"] for k in range(p)])
        self.intercept_ = np.array([mean["beta0_death"], mean["beta0_treatment"]])
        self.latent_factor_ = np.array([mean[f"nu[{i}]"] for i in range(n)])
        pooled = np.concatenate(self.chains_, axis=0)
        cols = {c: k for k, c in enumerate(self.columns_)}
        alpha = pooled[:, [cols[f"alpha_death[{i}]"] for i in range(n)]]
        # per-draw rescaling has heavy tails when draws approach -1, so the point
        # estimate rescales the posterior mean loading
        self.rescaled_loadings_ = rescale_loadings(alpha.mean(axis=0))
        log_d, log_t = per_unit_rates(pooled, self.columns_)
        self.relative_risk_ = np.column_stack([np.exp(log_d).mean(axis=0),
                                               np.exp(log_t).mean(axis=0)])
        return self

    def _check_rows(self, X):
        check_is_fitted(self, "summary_")
        X = check_array(X)
        if X.shape != (self.n_units_, self.n_features_in_):
            raise ValueError(f"X must have shape ({self.n_units_}, {self.n_features_in_}); "
                             "predictions are in-sample for the fitted units")
        return X

    def predict(self, X):
        """Posterior mean expected counts ``E * lambda`` for deaths and treatments."""
        self._check_rows(X)
        offsets = np.column_stack([self.data_.offsets_death, self.data_.offsets_treatment])
        return offsets * self.relative_risk_

    def transform(self, X):
        """Posterior mean latent factor per unit, shape ``(n, 1)``."""
        self._check_rows(X)
        return self.latent_factor_[:, None]
