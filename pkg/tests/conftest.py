"""공용 fixture"""
import numpy as np
import pytest

from app.services.cnoidal_service import params_from_roots, ring_spec


@pytest.fixture
def cnoidal_params():
    # ν = 0.3/1.2 = 0.25 인 ℓ=1, q=1 해
    return params_from_roots(0.5, 0.8, 1.7, ell=1, q=1)


@pytest.fixture
def ring(cnoidal_params):
    return ring_spec(cnoidal_params)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
