import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from cbfaug.loader import get_config_path, get_scenario  # noqa: E402
from cbfaug.pipeline import design_proportional, design_servo  # noqa: E402
from cbfaug.sim import simulate  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope='session')
def scalar_config():
    return get_scenario('scalar-servo')


@pytest.fixture(scope='session')
def aircraft_config():
    return get_scenario('aircraft-lateral')


@pytest.fixture(scope='session')
def scalar_path():
    return get_config_path('scalar-servo')


@pytest.fixture(scope='session')
def scalar_design(scalar_config):
    return design_proportional(scalar_config)


@pytest.fixture(scope='session')
def aircraft_design(aircraft_config):
    return design_servo(aircraft_config)


@pytest.fixture(scope='session')
def aircraft_trajectory(aircraft_config, aircraft_design):
    loop = aircraft_design.loop()
    return simulate(loop, aircraft_config.command(), aircraft_config.initial_state(loop.n),
                    dt=aircraft_config.dt, T=aircraft_config.horizon)
