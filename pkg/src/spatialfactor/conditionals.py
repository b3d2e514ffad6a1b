"""Full conditionals of the common spatial factor model.

Conjugate draws for the factor regression coefficients and the four variance
components, and unnormalized log-density kernels for every block updated by
Metropolis-Hastings.

Variance priors are uniform on the standard deviation, i.e.
``p(s2) ∝ s2 ** -0.5``.  Multiplying by a Gaussian kernel of rank ``d`` gives
``s2 ** -(d/2 + 1/2) * exp(-q / (2 s2))``, an inverse-gamma with shape
``d/2 - 1/2`` and scale ``q/2``. The error terms have full rank ``d = n``; the
ICAR blocks have rank ``n - 1`` on a connected graph because of the sum-zero
constraint.  :class:`Priors` generalizes this to ``InvGamma(a0, b0)`` priors,
with ``a0 = -1/2, b0 = 0`` recovering the flat-on-sd prior.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from . import likelihood as lik
from .data import Dataset
from .graph import AdjacencyGraph, precision_quadform

logger = logging.getLogger(__name__)

VARIANCE_NAMES = ("tau2", "tau2_death", "sigma2_death", "sigma2_treatment")


@dataclass
class ChainState:
    nu: np.ndarray
    alpha_death: np.ndarray
    eps_death: np.ndarray
    eps_treatment: np.ndarray
    beta0_death: float
    beta0_treatment: float
    beta: np.ndarray
    tau2: float
    tau2_death: float
    sigma2_death: float
    sigma2_treatment: float

    @property
    def n(self) -> int:
        return self.nu.shape[0]

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    def copy(self) -> "ChainState":
        return replace(self, **{f.name: np.array(getattr(self, f.name))
                                for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)})

    def check_constraints(self, tol: float = 1e-12) -> None:
        if abs(self.nu.mean()) >= tol:
            raise AssertionError(f"mean(nu) = {self.nu.mean():.3e}")
        if abs(self.alpha_death.mean() - 1.0) >= tol:
            raise AssertionError(f"mean(alpha_death) - 1 = {self.alpha_death.mean() - 1:.3e}")
        for name in VARIANCE_NAMES:
            if not getattr(self, name) > 0:
                raise AssertionError(f"{name} must be positive")

    # Flat layout used for chain files, in the documented column order.
    @staticmethod
    def column_names(n: int, p: int) -> list[str]:
        cols = ["beta0_death", "beta0_treatment"]
        cols += [f"beta[{k}]" for k in range(p)]
        cols += list(VARIANCE_NAMES)
        for block in ("nu", "alpha_death", "eps_death", "eps_treatment"):
            cols += [f"{block}[{i}]" for i in range(n)]
        return cols

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            [self.beta0_death, self.beta0_treatment], self.beta,
            [self.tau2, self.tau2_death, self.sigma2_death, self.sigma2_treatment],
            self.nu, self.alpha_death, self.eps_death, self.eps_treatment,
        ])

    @classmethod
    def from_vector(cls, vec, n: int, p: int) -> "ChainState":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (6 + p + 4 * n,):
            raise ValueError(f"vector of length {vec.shape} does not fit n={n}, p={p}")
        k = 2 + p
        blocks = [vec[k + 4 + b * n: k + 4 + (b + 1) * n].copy() for b in range(4)]
        return cls(
            nu=blocks[0], alpha_death=blocks[1], eps_death=blocks[2], eps_treatment=blocks[3],
            beta0_death=float(vec[0]), beta0_treatment=float(vec[1]), beta=vec[2:k].copy(),
            tau2=float(vec[k]), tau2_death=float(vec[k + 1]),
            sigma2_death=float(vec[k + 2]), sigma2_treatment=float(vec[k + 3]),
        )


@dataclass(frozen=True)
class Priors:
    """Prior hyperparameters.

    Defaults are the analysis priors: flat intercepts, ``N(0, 4)`` factor
    coefficients, and variances uniform on the standard deviation. Proper
    settings (finite ``intercept_variance``, ``variance_shape > 0`` and
    ``variance_scale > 0``) are needed for joint-distribution testing.
    """

    beta_variance: float = 4.0
    intercept_variance: float | None = None
    variance_shape: float = -0.5
    variance_scale: float = 0.0

    @property
    def is_proper(self) -> bool:
        return (self.intercept_variance is not None and self.variance_shape > 0
                and self.variance_scale > 0)


def beta_posterior(state: ChainState, graph: AdjacencyGraph, X,
                   prior_variance: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the Gaussian full conditional of ``beta``."""
    prec, rhs = _beta_system(state, graph, np.asarray(X, dtype=float), prior_variance)
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def _beta_system(state, graph, X, prior_variance):
    ei, ej = graph.edge_list[:, 0], graph.edge_list[:, 1]
    dx = X[ei] - X[ej]
    dnu = state.nu[ei] - state.nu[ej]
    prec = dx.T @ dx / state.tau2 + np.eye(X.shape[1]) / prior_variance
    rhs = dx.T @ dnu / state.tau2
    return prec, rhs


def gibbs_beta(state: ChainState, graph: AdjacencyGraph, X, rng: np.random.Generator,
               prior_variance: float = 4.0) -> np.ndarray:
    """Exact draw of ``beta`` given ``nu`` and ``tau2``.

    Uses the Cholesky factor ``L`` of the conditional precision: the mean solves
    ``L L' m = X'Q nu / tau2`` and the noise is ``L'^{-1} z``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError("X must be an (n, p) matrix with p >= 1")
    prec, rhs = _beta_system(state, graph, X, prior_variance)
    try:
        chol = cholesky(prec, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"beta precision not positive definite: {exc}") from None
    mean = cho_solve((chol, True), rhs, check_finite=False)
    z = rng.standard_normal(X.shape[1])
    return mean + solve_triangular(chol, z, lower=True, trans="T", check_finite=False)


def gibbs_variance(quadform: float, dim: int, rng: np.random.Generator,
                   prior_shape: float = -0.5, prior_scale: float = 0.0,
                   shape_offset: float = 0.0) -> float:
    """Inverse-gamma draw for a variance component.

    ``dim`` is the rank of the Gaussian kernel (``n`` for the errors, ``n - 1``
    for an ICAR block on a connected graph). ``shape_offset`` exists only to
    build deliberately broken samplers for self-tests.
    """
    shape = prior_shape + 0.5 * dim + shape_offset
    scale = prior_scale + 0.5 * quadform
    if not quadform >= 0 or not scale > 0:
        raise ValueError(f"inverse-gamma scale must be positive (quadform={quadform})")
    if not shape > 0:
        raise ValueError(f"inverse-gamma shape {shape} is not positive (dim={dim})")
    if shape <= 1:
        logger.debug("inverse-gamma shape %.3g <= 1: posterior mean undefined", shape)
    return scale / rng.gamma(shape)


def logdensity_nu(state: ChainState, graph: AdjacencyGraph, X, data: Dataset | None) -> float:
    """Likelihood plus ICAR kernel centred at ``X beta`` (unnormalized)."""
    xb = np.asarray(X, dtype=float) @ state.beta
    prior = -0.5 * precision_quadform(graph, state.nu, xb) / state.tau2
    if data is None:
        return prior
    return lik.joint_loglik(data, lik.LinkState.from_state(state)) + prior


def logdensity_alpha(state: ChainState, graph: AdjacencyGraph, data: Dataset | None) -> float:
    prior = -0.5 * precision_quadform(graph, state.alpha_death, 1.0) / state.tau2_death
    if data is None:
        return prior
    return lik.joint_loglik(data, lik.LinkState.from_state(state)) + prior


def logdensity_eps_pair(state: ChainState, data: Dataset | None, i: int) -> float:
    ed, et = state.eps_death[i], state.eps_treatment[i]
    prior = -0.5 * ed * ed / state.sigma2_death - 0.5 * et * et / state.sigma2_treatment
    if data is None:
        return prior
    link = lik.LinkState.from_state(state)
    return lik.unit_loglik(data, i, link.log_lambda_death[i], link.log_lambda_treatment[i]) + prior


def logdensity_intercepts(state: ChainState, data: Dataset | None, which: str,
                          priors: Priors | None = None) -> float:
    """Outcome-specific likelihood factor, plus the intercept prior if proper."""
    if which not in ("death", "treatment"):
        raise ValueError(f"which must be 'death' or 'treatment', got {which!r}")
    b0 = state.beta0_death if which == "death" else state.beta0_treatment
    out = 0.0
    if priors is not None and priors.intercept_variance is not None:
        out -= 0.5 * b0 * b0 / priors.intercept_variance
    if data is None:
        return out
    link = lik.LinkState.from_state(state)
    if which == "death":
        terms = lik.death_terms(data, link.log_lambda_death)
    else:
        terms = lik.treatment_terms(data, link.log_lambda_treatment)
    return out + float(np.sum(terms))
