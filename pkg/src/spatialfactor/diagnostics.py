"""Posterior summaries, convergence diagnostics and per-unit derived quantities.

Intervals are equal-tailed with linearly interpolated order statistics
(numpy's default ``linear`` quantile). Log relative risks use natural logs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


def rescale_loadings(alpha_death) -> np.ndarray:
    """Death loading as a share of the total loading, minus one half.

    The treatment loading is fixed at one, so this is ``a / (a + 1) - 0.5``;
    zero marks equal influence of both outcomes. ``a == -1`` has no share and
    yields NaN.
    """
    a = np.asarray(alpha_death, dtype=float)
    bad = a == -1.0
    if np.any(bad):
        logger.warning("rescale_loadings: %d loading(s) equal to -1 emitted as missing",
                       int(bad.sum()))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a / (a + 1.0) - 0.5
    return np.where(bad, np.nan, out)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n]
    return acov / n


def effective_sample_size(chains: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial positive (monotone) sequence.

    ``chains`` has shape ``(m, n)``. Returns NaN for a constant series; the
    result is capped at ``m * n``.
    """
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if n < 4:
        return float("nan")
    acov = np.stack([_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1.0)
    w = chain_var.mean()
    if not w > 0:
        return float("nan")
    var_plus = w * (n - 1.0) / n
    if m > 1:
        var_plus += chains.mean(axis=1).var(ddof=1)
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # sum adjacent pairs while positive, enforcing monotone decrease
    tau = 0.0
    prev = np.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = 2.0 * tau - 1.0
    ess = m * n / tau if tau > 0 else m * n
    return float(min(ess, m * n))


def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction; NaN when fewer than two chains are given."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    m, n = chains.shape
    if m < 2 or n < 4:
        return float("nan")
    half = n // 2
    parts = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    w = parts.var(axis=1, ddof=1).mean()
    b = half * parts.mean(axis=1).var(ddof=1)
    if not w > 0:
        return float("nan")
    var_plus = (half - 1.0) / half * w + b / half
    return float(np.sqrt(var_plus / w))


def _quantile_labels(level: float) -> tuple[str, str]:
    lo = (1.0 - level) / 2.0
    return f"q{round(lo * 1000):03d}", f"q{round((1.0 - lo) * 1000):03d}"


@dataclass
class PosteriorSummary:
    names: list[str]
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    ess: np.ndarray
    rhat: np.ndarray
    degenerate: np.ndarray
    level: float
    n_draws: int
    n_chains: int

    def row(self, name: str) -> dict:
        k = self.names.index(name)
        return dict(name=name, mean=float(self.mean[k]), lower=float(self.lower[k]),
                    upper=float(self.upper[k]), ess=float(self.ess[k]), rhat=float(self.rhat[k]))

    def to_csv(self, path: str, names: Sequence[str] | None = None) -> None:
        lo, hi = _quantile_labels(self.level)
        keep = set(names) if names is not None else None
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"name,mean,{lo},{hi},ess,rhat\n")
            for k, name in enumerate(self.names):
                if keep is not None and name not in keep:
                    continue
                vals = (self.mean[k], self.lower[k], self.upper[k], self.ess[k], self.rhat[k])
                fh.write(name + "," + ",".join(_fmt(v) for v in vals) + "\n")


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else repr(float(v))


def summarize(chains: Sequence[np.ndarray], names: Sequence[str], level: float = 0.95
              ) -> PosteriorSummary:
    """Summaries over one or more chains of shape ``(draws, params)``.

    Chains of unequal length are truncated to the shortest for ESS and R-hat;
    means and intervals use every draw.
    """
    chains = [np.atleast_2d(np.asarray(c, dtype=float)) for c in chains]
    if not chains or any(c.shape[0] == 0 for c in chains):
        raise ValueError("cannot summarize an empty chain")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    width = chains[0].shape[1]
    if any(c.shape[1] != width for c in chains) or width != len(names):
        raise ValueError("chains disagree with the parameter names")
    pooled = np.concatenate(chains, axis=0)
    if pooled.shape[0] < 10:
        raise ValueError(f"need at least 10 saved draws, got {pooled.shape[0]}")
    alpha = (1.0 - level) / 2.0
    lower, upper = np.quantile(pooled, [alpha, 1.0 - alpha], axis=0)
    mean = pooled.mean(axis=0)
    n_min = min(c.shape[0] for c in chains)
    stacked = np.stack([c[:n_min] for c in chains])  # (m, n, params)
    ess = np.array([effective_sample_size(stacked[:, :, k]) for k in range(width)])
    rhat = np.array([split_rhat(stacked[:, :, k]) for k in range(width)])
    degenerate = np.ptp(pooled, axis=0) == 0
    return PosteriorSummary(list(names), mean, lower, upper, ess, rhat, degenerate, level,
                            int(pooled.shape[0]), len(chains))


def _block(samples: np.ndarray, columns: Sequence[str], name: str) -> np.ndarray:
    idx = [k for k, c in enumerate(columns) if c.startswith(name + "[")]
    return samples[:, idx]


def per_unit_rates(samples: np.ndarray, columns: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Per-draw log relative risks ``(draws, n)`` for death and treatment."""
    samples = np.atleast_2d(samples)
    cols = list(columns)
    b0_d = samples[:, cols.index("beta0_death")][:, None]
    b0_t = samples[:, cols.index("beta0_treatment")][:, None]
    nu = _block(samples, cols, "nu")
    alpha = _block(samples, cols, "alpha_death")
    log_d = b0_d + alpha * nu + _block(samples, cols, "eps_death")
    log_t = b0_t + nu + _block(samples, cols, "eps_treatment")
    return log_d, log_t


def unit_table(chains: Sequence[np.ndarray], columns: Sequence[str], level: float = 0.95
               ) -> tuple[list[str], np.ndarray]:
    """Per-unit posterior means and intervals of the mapped quantities."""
    pooled = np.concatenate([np.atleast_2d(c) for c in chains], axis=0)
    log_d, log_t = per_unit_rates(pooled, columns)
    series = {
        "log_smr": log_d,
        "log_treatment_ratio": log_t,
        "factor": _block(pooled, columns, "nu"),
        "rescaled_loading": rescale_loadings(_block(pooled, columns, "alpha_death")),
    }
    alpha = (1.0 - level) / 2.0
    lo, hi = _quantile_labels(level)
    header = ["unit_id"]
    cols = [np.arange(log_d.shape[1], dtype=float)]
    for key, draws in series.items():
        header += [f"{key}_mean", f"{key}_{lo}", f"{key}_{hi}"]
        cols.append(np.nanmean(draws, axis=0))
        q = np.nanquantile(draws, [alpha, 1.0 - alpha], axis=0)
        cols += [q[0], q[1]]
    return header, np.column_stack(cols)


def write_unit_table(chains, columns, path: str, level: float = 0.95) -> None:
    header, table = unit_table(chains, columns, level)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in table:
            fh.write(str(int(row[0])) + "," + ",".join(_fmt(v) for v in row[1:]) + "\n")
