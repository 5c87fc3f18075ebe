import numpy as np
import pytest

from yearslost.simlab import SimConfig, sample_dgp
from yearslost.survdata import SurvivalDataset


def discrete_dataset(n=200, seed=0, d=1, n_times=6):
    """Binary covariates, integer event times and light censoring."""
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 2, size=(n, d)).astype(float)
    A = rng.integers(0, 2, size=n)
    time = rng.integers(1, n_times + 1, size=n).astype(float)
    event = rng.choice([0, 1, 2], p=[0.2, 0.5, 0.3], size=n)
    return SurvivalDataset(time, event, A, X)


@pytest.fixture(scope="session")
def sim():
    return SimConfig()


@pytest.fixture(scope="session")
def sim_data_500(sim):
    return sample_dgp(sim, 500, 11)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
