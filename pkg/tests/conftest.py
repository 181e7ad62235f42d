import logging

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "hangsim", deadline=None, max_examples=30,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("hangsim")


@pytest.fixture(autouse=True)
def _quiet_drift_warnings(caplog):
    caplog.set_level(logging.ERROR, logger="hangsim")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
