import numpy as np
import pytest

from base.neural import NetConfig
from base.signal_core import SignalWindow
from base.synth import SynthSpec, generate


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run desk-scale acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run, use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def tiny_cfg() -> NetConfig:
    return NetConfig.preset("tiny")


@pytest.fixture
def random_window():
    def make(seed: int = 0, scale: float = 1.0) -> SignalWindow:
        rng = np.random.default_rng(seed)
        return SignalWindow(scale * rng.standard_normal((3, 300)))
    return make


@pytest.fixture(scope="session")
def small_store():
    """4 labelled subjects, 1 day, 12 windows each"""
    return generate(SynthSpec(n_subjects=4, days_per_subject=1, windows_per_day=12))


@pytest.fixture(scope="session")
def two_day_store():
    """6 unlabelled subjects, 2 days, 10 windows per day"""
    return generate(SynthSpec(n_subjects=6, days_per_subject=2, windows_per_day=10, labelled=False))
