"""
Shared fixtures: reference distributions and small grids of the built-in models
"""

import sys
from pathlib import Path

import numpy as np
import pytest

# Add parent directory to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import GBM2D_PARAMS, HESTON_PARAMS, SABR_PARAMS
from src.models.sde_models import Schedule, build_model
from src.quantization.grid_builder import pmq
from src.quantization.mixture_dists import GaussianMixture


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def standard_normal():
    return GaussianMixture([0.0], [1.0], [1.0])


@pytest.fixture(scope='session')
def heston_model():
    return build_model('heston', HESTON_PARAMS)


@pytest.fixture(scope='session')
def sabr_model():
    return build_model('sabr', SABR_PARAMS)


@pytest.fixture(scope='session')
def gbm2d_model():
    return build_model('gbm2d', GBM2D_PARAMS)


@pytest.fixture(scope='session')
def heston_grids(heston_model):
    return pmq(heston_model, Schedule(1.0, 6, (14, 8)), ('euler', 'wo2'))


@pytest.fixture(scope='session')
def sabr_grids(sabr_model):
    return pmq(sabr_model, Schedule(1.0, 6, (14, 8)), ('euler', 'wo2'))


@pytest.fixture(scope='session')
def gbm2d_grids(gbm2d_model):
    return pmq(gbm2d_model, Schedule(1.0, 6, (8, 10)))
