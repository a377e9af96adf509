import datetime as dt

import numpy as np
import pytest
from hypothesis import settings

from optbayes.market_data import OptionGrid, SurfaceObservation
from optbayes.models.families import ModelFamily, ModelInstance

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# one representative admissible instance per family
INSTANCES = {f: ModelInstance.create(f) for f in ModelFamily}


@pytest.fixture
def grid():
    return OptionGrid()


@pytest.fixture
def flat_obs(grid):
    return SurfaceObservation(dt.date(2021, 1, 4), 100.0, 0.0, np.full(grid.shape, 0.2), grid)
