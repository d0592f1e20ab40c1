import numpy as np
import pytest

from splashsim.cli_experiments.commands import splash_search
from splashsim.cli_experiments.config import load_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def splash_run():
    """The default splash search, shared by the tests that inspect it (about 20 s)."""
    cfg = load_config("splash")
    report, result, mesh = splash_search(cfg)
    return cfg, report, result, mesh
