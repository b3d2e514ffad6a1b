import numpy as np
import pytest

from spatialfactor.data import build_dataset
from spatialfactor.graph import lattice


def make_dataset(n, rng, censored=None, p=1):
    populations = rng.integers(5_000, 50_000, size=n)
    deaths = rng.poisson(populations * 6e-4)
    deaths[0] += 1
    lower = rng.poisson(populations * 5e-3)
    lower[0] += 1
    if censored is not None:
        lower = np.where(censored, (lower // 10) * 10, lower)
    raw = rng.normal(size=(n, p))
    return build_dataset(populations, deaths, lower, censored, raw)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_problem(rng):
    g = lattice(2, 3)
    censored = np.zeros(6, dtype=bool)
    censored[2] = True
    return g, make_dataset(6, rng, censored=censored)


def pytest_terminal_summary(terminalreporter):
    from tests import test_acceptance
    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(line)
