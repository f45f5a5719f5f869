"""Shared fixtures.

The desk artifacts (grids, measurement dataset, environment) take a couple of
seconds to build, so they are session-scoped masters; tests that mutate
environment state get cheap per-test clones.
"""

import numpy as np
import pytest

from tiltlab import toys
from tiltlab.cli import build_dataset, build_env
from tiltlab.config import load_run_config
from tiltlab.scenario import generate_grids


@pytest.fixture(scope="session")
def desk_config():
    """Built-in desk defaults, isolated from ambient environment variables."""
    return load_run_config(environ={})


@pytest.fixture(scope="session")
def desk_grids(desk_config):
    return generate_grids(desk_config.scenario)


@pytest.fixture(scope="session")
def desk_dataset(desk_config, desk_grids):
    return build_dataset(desk_config, desk_grids)


@pytest.fixture(scope="session")
def _desk_env_master(desk_config):
    return build_env(desk_config)


@pytest.fixture
def desk_env(_desk_env_master):
    return _desk_env_master.clone(seed=0)


@pytest.fixture(scope="session")
def _deception_master():
    return toys.make_env("deception")


@pytest.fixture(scope="session")
def _control_master():
    return toys.make_env("control")


@pytest.fixture
def deception_env(_deception_master):
    return _deception_master.clone(seed=0)


@pytest.fixture
def control_env(_control_master):
    return _control_master.clone(seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
