"""Shared fixtures: a small circle-case pipeline reused across test modules."""

import warnings

import numpy as np
import pytest

from phifem_heat import circle_case
from phifem_heat.driver import run_single


@pytest.fixture(scope="session")
def circle():
    return circle_case()


@pytest.fixture(scope="session")
def circle_run(circle):
    """One full pipeline execution at n=8 with the trajectory retained."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return run_single(circle, 8, k=1, l=2, dt_rule="1", store_trajectory=True)


@pytest.fixture
def rng():
    return np.random.default_rng(20240824)
