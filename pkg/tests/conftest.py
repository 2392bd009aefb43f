import logging

import numpy as np
import pytest

from bqlab.spectral import Grid
from bqlab.utils import set_workers


@pytest.fixture(autouse=True)
def reset_logging():
    # The CLI callback detaches the bqlab logger from the root logger.
    logger = logging.getLogger("bqlab")
    logger.handlers.clear()
    logger.propagate = True
    logger.setLevel(logging.NOTSET)
    set_workers(1)
    yield


@pytest.fixture
def square_grid() -> Grid:
    return Grid(nx=64, ny=64, lx=2 * np.pi, ly=2 * np.pi)


@pytest.fixture
def patch_grid() -> Grid:
    return Grid(nx=64, ny=64, lx=8.0, ly=8.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
