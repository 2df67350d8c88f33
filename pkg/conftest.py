import os
import tempfile

import numpy as np
import pytest

# the run store is created at import time; keep test runs out of the working directory
os.environ.setdefault(
    "FAIRSSL_DATABASE_URL", f"sqlite:///{os.path.join(tempfile.mkdtemp(prefix='fairssl-'), 'runs.db')}"
)

from schemas import Dataset, SolverConfig, SplitSpec  # noqa: E402
from Services.dataset import split  # noqa: E402
from Services.synthetic import make_biased_groups  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_dataset(features, sensitive, labels=None):
    features = np.asarray(features, dtype=float)
    return Dataset(
        features=features,
        sensitive=sensitive,
        labels=labels,
        feature_names=[f"x{i}" for i in range(features.shape[1])],
        row_ids=np.arange(features.shape[0]),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def biased_data():
    return make_biased_groups(160, 3, seed=0, shift=1.0)


@pytest.fixture
def small_split(biased_data):
    return split(biased_data, SplitSpec(n_labeled=40, n_test=40, seed=0))


@pytest.fixture
def fast_solver():
    return SolverConfig(max_outer_iters=8, ccp_max_iters=40)
