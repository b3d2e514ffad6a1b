"""Bivariate Poisson log-likelihood with interval-censored treatment counts.

Death counts are ``Poisson(E_D * lambda_D)``. Treatment counts are
``Poisson(E_T * lambda_T)`` when fully observed; a censored unit contributes
``P(lower <= Y <= lower + width)`` instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .data import Dataset

#: Poisson means below this are rejected rather than silently giving -inf.
MIN_MEAN = 1e-290


@dataclass(frozen=True, eq=False)
class LinkState:
    """Log relative risks for both outcomes (treatment loading fixed at one)."""

    log_lambda_death: np.ndarray
    log_lambda_treatment: np.ndarray

    @classmethod
    def from_state(cls, state) -> "LinkState":
        ld = state.beta0_death + state.alpha_death * state.nu + state.eps_death
        lt = state.beta0_treatment + state.nu + state.eps_treatment
        return cls(ld, lt)


def _check_mean(mean) -> None:
    if not np.all(np.asarray(mean) >= MIN_MEAN):
        raise ValueError(f"Poisson mean must be >= {MIN_MEAN}, got {mean}")


def poisson_logpmf(y: int, mean: float) -> float:
    _check_mean(mean)
    return float(y * np.log(mean) - mean - gammaln(y + 1.0))


def censored_interval_logprob(lower: int, width: int, mean: float) -> float:
    """``log P(lower <= Y <= lower + width)`` for ``Y ~ Poisson(mean)``.

    Summed on the log scale from the pmf terms, so intervals with tiny mass
    keep full relative precision.
    """
    _check_mean(mean)
    if lower < 0 or width < 0:
        raise ValueError("lower and width must be nonnegative")
    k = np.arange(lower, lower + width + 1, dtype=float)
    terms = k * np.log(mean) - mean - gammaln(k + 1.0)
    return float(logsumexp(terms))


def death_terms(data: Dataset, log_lambda) -> np.ndarray:
    """Per-unit death log-pmf terms given log relative risks."""
    log_mean = data.log_offsets_death + np.asarray(log_lambda, dtype=float)
    _check_mean(np.exp(log_mean))
    return data.deaths * log_mean - np.exp(log_mean) - data.lgamma_deaths


def treatment_terms(data: Dataset, log_lambda) -> np.ndarray:
    """Per-unit treatment terms; censored units get the interval log-probability."""
    log_mean = data.log_offsets_treatment + np.asarray(log_lambda, dtype=float)
    mean = np.exp(log_mean)
    _check_mean(mean)
    out = data.treatments_lower * log_mean - mean - data.lgamma_treatments
    cens = np.flatnonzero(data.censored)
    if cens.size:
        k = data.treatments_lower[cens, None] + np.arange(data.censor_width + 1)
        terms = k * log_mean[cens, None] - mean[cens, None] - gammaln(k + 1.0)
        out[cens] = logsumexp(terms, axis=1)
    return out


def joint_loglik(data: Dataset, link: LinkState) -> float:
    if link.log_lambda_death.shape != (data.n,) or link.log_lambda_treatment.shape != (data.n,):
        raise ValueError("link state does not match dataset size")
    d = death_terms(data, link.log_lambda_death)
    t = treatment_terms(data, link.log_lambda_treatment)
    # fixed ascending-unit reduction
    total = 0.0
    for i in range(data.n):
        total += d[i] + t[i]
    return total


def unit_loglik(data: Dataset, i: int, log_lambda_death: float, log_lambda_treatment: float) -> float:
    if not 0 <= i < data.n:
        raise IndexError(f"unit index {i} out of range [0, {data.n})")
    d = poisson_logpmf(int(data.deaths[i]), data.offsets_death[i] * np.exp(log_lambda_death))
    mt = data.offsets_treatment[i] * np.exp(log_lambda_treatment)
    if data.censored[i]:
        t = censored_interval_logprob(int(data.treatments_lower[i]), data.censor_width, mt)
    else:
        t = poisson_logpmf(int(data.treatments_lower[i]), mt)
    return d + t


def unit_loglik_delta(data: Dataset, link: LinkState, i: int, proposed_log_lambdas) -> float:
    """Change in :func:`joint_loglik` when only unit ``i``'s link values move."""
    new_d, new_t = proposed_log_lambdas
    cur = unit_loglik(data, i, link.log_lambda_death[i], link.log_lambda_treatment[i])
    return unit_loglik(data, i, new_d, new_t) - cur
