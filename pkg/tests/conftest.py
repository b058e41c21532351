import numpy as np
import pandas as pd
import pytest

from emlasso.simlab import ScenarioConfig, generate_scenario
from emlasso.tabular import ObservationTable, write_csv


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-scale Monte Carlo checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale Monte Carlo checks (use --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def s1_table():
    table, _ = generate_scenario(ScenarioConfig(scenario="S1", n=1000, reps=1), np.random.default_rng([7, 0]))
    return table


@pytest.fixture
def s1_csv(tmp_path, s1_table):
    path = tmp_path / "s1.csv"
    write_csv(s1_table, path)
    return str(path)


@pytest.fixture
def tiny_table():
    covariates = pd.DataFrame({"X": [0.0, 1.0, 0.0, 1.0], "V1": [1.0, 1.0, 0.0, 0.0]})
    return ObservationTable(covariates, [0, 1, 1, 0], [1.5, 2.0, -0.5, 0.25])
