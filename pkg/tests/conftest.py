"""Shared fixtures. The benchmark suite is expensive enough to build once."""

import numpy as np
import pytest

from railspeed import dataset, simulator


@pytest.fixture(scope="session")
def suite():
    return simulator.make_benchmark_suite(seed=42)


@pytest.fixture(scope="session")
def train_runs(suite):
    return [r for r in suite if r.role == "train"]


@pytest.fixture(scope="session")
def test_runs(suite):
    return [r for r in suite if r.role == "test"]


@pytest.fixture(scope="session")
def norm(train_runs):
    return dataset.NormalizationConfig.from_runs(train_runs)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
