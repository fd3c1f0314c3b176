import math

import numpy as np
import pytest

from pyslide.field import Grid, from_function
from pyslide.parallel import worker_scope


@pytest.fixture(autouse=True)
def serial_workers():
    with worker_scope(1):
        yield


@pytest.fixture
def line_grid():
    return Grid.box([-2.0], [2.0], 0.01)


@pytest.fixture
def square_grid():
    return Grid.box([-3.0, -3.0], [3.0, 3.0], 0.1)


@pytest.fixture
def interface(square_grid):
    """Planar Allen-Cahn interface ``tanh(x_2/√2)``."""

    return from_function(square_grid, lambda x: np.tanh(x[1] / math.sqrt(2.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
