import numpy as np
import pytest

from shsnet.model import build_paper_example
from shsnet.synth import synthesize_scenario


@pytest.fixture(scope="session")
def paper():
    return build_paper_example()


@pytest.fixture(scope="session")
def paper_synthesis(paper):
    return synthesize_scenario(paper)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
