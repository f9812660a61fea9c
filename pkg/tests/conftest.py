import numpy as np
import pytest

from reachcert.cli import parse_scenario, synthesize

EXAMPLES = ("example2", "example3", "example4")


@pytest.fixture(scope="session")
def scenarios():
    return {k: parse_scenario(k) for k in EXAMPLES}


@pytest.fixture(scope="session")
def certificates(scenarios):
    return {k: synthesize(s) for k, s in scenarios.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
