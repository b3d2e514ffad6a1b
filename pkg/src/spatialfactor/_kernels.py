"""Compiled Metropolis sweeps.

Random numbers are drawn by the caller (numpy ``Generator``) and passed in, so
a chain is reproducible regardless of JIT state. Each kernel returns a status
code: 0 ok, 1 a non-finite log acceptance ratio was met.
"""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def pois_term(y, log_mean, lgy1):
    return y * log_mean - math.exp(log_mean) - lgy1


@njit(cache=True)
def cens_term(lower, width, log_mean):
    mean = math.exp(log_mean)
    hi = -math.inf
    for k in range(lower, lower + width + 1):
        t = k * log_mean - mean - math.lgamma(k + 1.0)
        if t > hi:
            hi = t
    if hi == -math.inf:
        return hi
    s = 0.0
    for k in range(lower, lower + width + 1):
        s += math.exp(k * log_mean - mean - math.lgamma(k + 1.0) - hi)
    return hi + math.log(s)


@njit(cache=True)
def death_unit(j, eta, deaths, lg_d, log_e_d):
    return pois_term(deaths[j], log_e_d[j] + eta, lg_d[j])


@njit(cache=True)
def treat_unit(j, eta, t_low, lg_t, log_e_t, cens, width):
    if cens[j]:
        return cens_term(t_low[j], width, log_e_t[j] + eta)
    return pois_term(t_low[j], log_e_t[j] + eta, lg_t[j])


@njit(cache=True)
def fill_terms(nu, alpha, eps_d, eps_t, b0_d, b0_t, deaths, lg_d, log_e_d,
               t_low, lg_t, log_e_t, cens, width, ll_d, ll_t):
    for j in range(nu.shape[0]):
        ll_d[j] = death_unit(j, b0_d + alpha[j] * nu[j] + eps_d[j], deaths, lg_d, log_e_d)
        ll_t[j] = treat_unit(j, b0_t + nu[j] + eps_t[j], t_low, lg_t, log_e_t, cens, width)


@njit(cache=True)
def edge_quadform(r, ei, ej):
    q = 0.0
    for k in range(ei.shape[0]):
        d = r[ei[k]] - r[ej[k]]
        q += d * d
    return q


@njit(cache=True)
def _sum(x):
    s = 0.0
    for j in range(x.shape[0]):
        s += x[j]
    return s


@njit(cache=True)
def sweep_nu(nu, alpha, eps_d, eps_t, b0_d, b0_t, xb, tau2, ei, ej,
             deaths, lg_d, log_e_d, t_low, lg_t, log_e_t, cens, width,
             ll_d, ll_t, steps, z, log_u, accepted, use_lik):
    n = nu.shape[0]
    cand = np.empty(n)
    r = np.empty(n)
    new_d = np.empty(n)
    new_t = np.empty(n)
    for j in range(n):
        r[j] = nu[j] - xb[j]
    q_cur = edge_quadform(r, ei, ej)
    s_cur = _sum(ll_d) + _sum(ll_t)
    for i in range(n):
        for j in range(n):
            cand[j] = nu[j]
        cand[i] += steps[i] * z[i]
        m = _sum(cand) / n
        for j in range(n):
            cand[j] -= m
            r[j] = cand[j] - xb[j]
        q_new = edge_quadform(r, ei, ej)
        s_new = 0.0
        if use_lik:
            for j in range(n):
                new_d[j] = death_unit(j, b0_d + alpha[j] * cand[j] + eps_d[j], deaths, lg_d, log_e_d)
                new_t[j] = treat_unit(j, b0_t + cand[j] + eps_t[j], t_low, lg_t, log_e_t, cens, width)
            s_new = _sum(new_d) + _sum(new_t)
        log_r = (s_new - s_cur) - 0.5 * (q_new - q_cur) / tau2
        if math.isnan(log_r):
            return 1
        accepted[i] = log_u[i] < log_r
        if accepted[i]:
            for j in range(n):
                nu[j] = cand[j]
            if use_lik:
                for j in range(n):
                    ll_d[j] = new_d[j]
                    ll_t[j] = new_t[j]
            q_cur = q_new
            s_cur = s_new
    return 0


@njit(cache=True)
def sweep_alpha(nu, alpha, eps_d, b0_d, tau2_d, ei, ej, deaths, lg_d, log_e_d,
                ll_d, steps, z, log_u, accepted, use_lik):
    n = nu.shape[0]
    cand = np.empty(n)
    r = np.empty(n)
    new_d = np.empty(n)
    for j in range(n):
        r[j] = alpha[j] - 1.0
    q_cur = edge_quadform(r, ei, ej)
    s_cur = _sum(ll_d)
    for i in range(n):
        for j in range(n):
            cand[j] = alpha[j]
        cand[i] += steps[i] * z[i]
        m = _sum(cand) / n
        for j in range(n):
            cand[j] = cand[j] - m + 1.0
            r[j] = cand[j] - 1.0
        q_new = edge_quadform(r, ei, ej)
        s_new = 0.0
        if use_lik:
            for j in range(n):
                new_d[j] = death_unit(j, b0_d + cand[j] * nu[j] + eps_d[j], deaths, lg_d, log_e_d)
            s_new = _sum(new_d)
        log_r = (s_new - s_cur) - 0.5 * (q_new - q_cur) / tau2_d
        if math.isnan(log_r):
            return 1
        accepted[i] = log_u[i] < log_r
        if accepted[i]:
            for j in range(n):
                alpha[j] = cand[j]
            if use_lik:
                for j in range(n):
                    ll_d[j] = new_d[j]
            q_cur = q_new
            s_cur = s_new
    return 0


@njit(cache=True)
def sweep_eps(nu, alpha, eps_d, eps_t, b0_d, b0_t, s2_d, s2_t,
              deaths, lg_d, log_e_d, t_low, lg_t, log_e_t, cens, width,
              ll_d, ll_t, steps, z_d, z_t, log_u, accepted, use_lik):
    for i in range(nu.shape[0]):
        cd = eps_d[i] + steps[i] * z_d[i]
        ct = eps_t[i] + steps[i] * z_t[i]
        nd = 0.0
        nt = 0.0
        dl = 0.0
        if use_lik:
            nd = death_unit(i, b0_d + alpha[i] * nu[i] + cd, deaths, lg_d, log_e_d)
            nt = treat_unit(i, b0_t + nu[i] + ct, t_low, lg_t, log_e_t, cens, width)
            dl = (nd + nt) - (ll_d[i] + ll_t[i])
        log_r = dl - 0.5 * (cd * cd - eps_d[i] * eps_d[i]) / s2_d \
                   - 0.5 * (ct * ct - eps_t[i] * eps_t[i]) / s2_t
        if math.isnan(log_r):
            return 1
        accepted[i] = log_u[i] < log_r
        if accepted[i]:
            eps_d[i] = cd
            eps_t[i] = ct
            if use_lik:
                ll_d[i] = nd
                ll_t[i] = nt
    return 0


@njit(cache=True)
def intercept_delta_death(b0_new, nu, alpha, eps_d, deaths, lg_d, log_e_d, ll_d, new_d):
    """Fills ``new_d`` and returns the death log-likelihood change."""
    for j in range(nu.shape[0]):
        new_d[j] = death_unit(j, b0_new + alpha[j] * nu[j] + eps_d[j], deaths, lg_d, log_e_d)
    return _sum(new_d) - _sum(ll_d)


@njit(cache=True)
def intercept_delta_treatment(b0_new, nu, eps_t, t_low, lg_t, log_e_t, cens, width, ll_t, new_t):
    for j in range(nu.shape[0]):
        new_t[j] = treat_unit(j, b0_new + nu[j] + eps_t[j], t_low, lg_t, log_e_t, cens, width)
    return _sum(new_t) - _sum(ll_t)
