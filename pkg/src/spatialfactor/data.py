"""Observed counts, censoring flags, offsets and the standardized design matrix."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import gammaln

logger = logging.getLogger(__name__)

#: Censored treatment counts are known to lie in ``[lower, lower + CENSOR_WIDTH]``.
CENSOR_WIDTH = 9

DATA_COLUMNS = ("unit_id", "population", "deaths", "treatment_lower", "censored")


class DataError(ValueError):
    """Raised when input tables fail validation."""


@dataclass(frozen=True, eq=False)
class Dataset:
    deaths: np.ndarray
    treatments_lower: np.ndarray
    censored: np.ndarray
    populations: np.ndarray
    covariates: np.ndarray
    covariate_names: tuple[str, ...]
    offsets_death: np.ndarray
    offsets_treatment: np.ndarray
    covariate_mean: np.ndarray | None = None
    covariate_sd: np.ndarray | None = None
    censor_width: int = CENSOR_WIDTH

    def __post_init__(self):
        n = self.deaths.shape[0]
        for name in ("treatments_lower", "censored", "populations",
                     "offsets_death", "offsets_treatment"):
            if getattr(self, name).shape != (n,):
                raise DataError(f"{name} has shape {getattr(self, name).shape}, expected ({n},)")
        if self.covariates.ndim != 2 or self.covariates.shape[0] != n:
            raise DataError(f"covariates must be ({n}, p), got {self.covariates.shape}")
        if len(self.covariate_names) != self.covariates.shape[1]:
            raise DataError("covariate_names length does not match covariate columns")
        if self.covariates.shape[0] > 1:
            col_mean = self.covariates.mean(axis=0)
            col_sd = self.covariates.std(axis=0, ddof=1)
            if np.any(np.abs(col_mean) >= 1e-10) or np.any(np.abs(col_sd - 1.0) >= 1e-8):
                raise DataError("covariates must be standardized (column mean 0, sd 1)")
        if np.any(self.deaths < 0) or np.any(self.treatments_lower < 0):
            raise DataError("counts must be nonnegative")
        if np.any(self.populations <= 0):
            raise DataError("populations must be positive")
        if not (np.all(self.offsets_death > 0) and np.all(self.offsets_treatment > 0)):
            raise DataError("offsets must be strictly positive")
        for arr in (self.deaths, self.treatments_lower, self.censored, self.populations,
                    self.covariates, self.offsets_death, self.offsets_treatment):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return int(self.deaths.shape[0])

    @property
    def p(self) -> int:
        return int(self.covariates.shape[1])

    # Constants reused by every likelihood evaluation.
    @cached_property
    def log_offsets_death(self) -> np.ndarray:
        return np.log(self.offsets_death)

    @cached_property
    def log_offsets_treatment(self) -> np.ndarray:
        return np.log(self.offsets_treatment)

    @cached_property
    def lgamma_deaths(self) -> np.ndarray:
        return gammaln(self.deaths + 1.0)

    @cached_property
    def lgamma_treatments(self) -> np.ndarray:
        return gammaln(self.treatments_lower + 1.0)

    def with_counts(self, deaths, treatments_lower) -> "Dataset":
        """Copy with replaced outcome records; offsets and design are kept."""
        return Dataset(
            deaths=np.asarray(deaths, dtype=np.int64),
            treatments_lower=np.asarray(treatments_lower, dtype=np.int64),
            censored=self.censored.copy(),
            populations=self.populations.copy(),
            covariates=self.covariates.copy(),
            covariate_names=self.covariate_names,
            offsets_death=self.offsets_death.copy(),
            offsets_treatment=self.offsets_treatment.copy(),
            covariate_mean=self.covariate_mean,
            covariate_sd=self.covariate_sd,
            censor_width=self.censor_width,
        )


def compute_offsets(populations, counts) -> tuple[float, np.ndarray]:
    """Statewide rate ``sum(counts) / sum(populations)`` and offsets ``P_i * rate``."""
    populations = np.asarray(populations, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if populations.shape != counts.shape:
        raise DataError("populations and counts differ in length")
    if np.any(populations <= 0):
        raise DataError("populations must be positive")
    total = counts.sum()
    if total <= 0:
        raise DataError("total count is zero; the baseline rate is undefined")
    rate = total / populations.sum()
    return float(rate), populations * rate


def standardize_covariates(raw) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center each column and scale to unit sample sd (``ddof=1``).

    Returns ``(standardized, mean, sd)``.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[:, None]
    if raw.shape[0] < 2:
        raise DataError("need at least two rows to standardize")
    mean = raw.mean(axis=0)
    centered = raw - mean
    sd = np.sqrt(np.sum(centered**2, axis=0) / (raw.shape[0] - 1))
    bad = np.flatnonzero(~(sd > 0))
    if bad.size:
        raise DataError(f"constant covariate column(s) at index {bad.tolist()}")
    z = centered / sd
    # second pass removes O(eps) residual mean left by the division
    z -= z.mean(axis=0)
    return z, mean, sd


def destandardize(z, mean, sd) -> np.ndarray:
    return np.asarray(z) * sd + mean


def build_dataset(
    populations,
    deaths,
    treatments_lower,
    censored=None,
    raw_covariates=None,
    covariate_names: Sequence[str] | None = None,
) -> Dataset:
    """Assemble a :class:`Dataset`, standardizing covariates and deriving offsets.

    The treatment baseline rate counts censored units at their observed lower
    bound.
    """
    populations = np.asarray(populations, dtype=np.int64)
    deaths = np.asarray(deaths, dtype=np.int64)
    treatments_lower = np.asarray(treatments_lower, dtype=np.int64)
    n = populations.shape[0]
    censored = np.zeros(n, dtype=bool) if censored is None else np.asarray(censored, dtype=bool)
    if raw_covariates is None:
        raise DataError("at least one covariate column is required")
    z, mean, sd = standardize_covariates(raw_covariates)
    if covariate_names is None:
        covariate_names = tuple(f"x{k}" for k in range(z.shape[1]))
    _, e_d = compute_offsets(populations, deaths)
    _, e_t = compute_offsets(populations, treatments_lower)
    if censored.any():
        logger.info("treatment baseline rate uses lower bounds for %d censored unit(s)",
                    int(censored.sum()))
    return Dataset(deaths, treatments_lower, censored, populations, z, tuple(covariate_names),
                   e_d, e_t, mean, sd)


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(tok.strip() for tok in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    return header, rows[1:]


def _check_unit_ids(path: str, ids: list[str], n: int | None) -> None:
    for k, tok in enumerate(ids):
        if tok.strip() != str(k):
            raise DataError(f"{path}: line {k + 2}: unit_id {tok!r} out of order (expected {k})")
    if n is not None and len(ids) != n:
        raise DataError(f"{path}: {len(ids)} units, graph has {n}")


def load_dataset(data_path: str, covariate_path: str, n: int | None = None,
                 covariates: Sequence[str] | None = None) -> Dataset:
    """Read the data and covariate CSVs.

    ``covariates`` optionally names the columns to use; a requested column
    missing from the file is a :class:`DataError` naming it.
    """
    header, rows = _read_rows(data_path)
    if tuple(header) != DATA_COLUMNS:
        raise DataError(f"{data_path}: header must be {','.join(DATA_COLUMNS)}")
    _check_unit_ids(data_path, [r[0] for r in rows], n)
    cols: list[list[int]] = [[], [], [], []]
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(DATA_COLUMNS):
            raise DataError(f"{data_path}: line {lineno}: expected {len(DATA_COLUMNS)} fields")
        for k, tok in enumerate(row[1:]):
            try:
                cols[k].append(int(tok))
            except ValueError:
                raise DataError(f"{data_path}: line {lineno}: non-integer {DATA_COLUMNS[k + 1]} "
                                f"{tok!r}") from None
    population, deaths, lower, cens = (np.array(c, dtype=np.int64) for c in cols)
    if not np.isin(cens, (0, 1)).all():
        raise DataError(f"{data_path}: censored must be 0 or 1")

    cheader, crows = _read_rows(covariate_path)
    if not cheader or cheader[0] != "unit_id":
        raise DataError(f"{covariate_path}: first column must be unit_id")
    available = cheader[1:]
    wanted = list(covariates) if covariates is not None else available
    for name in wanted:
        if name not in available:
            raise DataError(f"{covariate_path}: missing covariate column {name!r}")
    _check_unit_ids(covariate_path, [r[0] for r in crows], len(rows))
    idx = [cheader.index(name) for name in wanted]
    raw = np.empty((len(crows), len(idx)))
    for lineno, row in enumerate(crows, start=2):
        if len(row) != len(cheader):
            raise DataError(f"{covariate_path}: line {lineno}: expected {len(cheader)} fields")
        for k, col in enumerate(idx):
            try:
                raw[lineno - 2, k] = float(row[col])
            except ValueError:
                raise DataError(f"{covariate_path}: line {lineno}: non-numeric "
                                f"{cheader[col]!r} value {row[col]!r}") from None
    if not np.all(np.isfinite(raw)):
        raise DataError(f"{covariate_path}: non-finite covariate values")
    try:
        return build_dataset(population, deaths, lower, cens.astype(bool), raw, wanted)
    except DataError as exc:
        raise DataError(f"{data_path}: {exc}") from None


def write_dataset(data: Dataset, data_path: str, covariate_path: str, raw_covariates=None) -> None:
    """Write the two input CSVs; covariates are written raw if given, else standardized."""
    with open(data_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(DATA_COLUMNS) + "\n")
        for i in range(data.n):
            fh.write(f"{i},{data.populations[i]},{data.deaths[i]},"
                     f"{data.treatments_lower[i]},{int(data.censored[i])}\n")
    cov = data.covariates if raw_covariates is None else np.asarray(raw_covariates)
    with open(covariate_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(("unit_id",) + tuple(data.covariate_names)) + "\n")
        for i in range(data.n):
            fh.write(",".join([str(i)] + [repr(float(v)) for v in cov[i]]) + "\n")
