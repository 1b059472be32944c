"""Shared fixtures: the published parameter set and default vehicle"""

import pytest

import config
import ecbf_core as ecbf
import quad_dynamics as qd
from nmpc_solver import OcpConfig


@pytest.fixture
def params():
    return qd.QuadParams()


@pytest.fixture
def gains():
    return ecbf.EcbfGains.from_alphas(config.ALPHA1, config.ALPHA2)


@pytest.fixture
def geom():
    return ecbf.SafetyGeometry(config.D_S, config.D_SO, config.ROBOT_RADIUS, config.ROBOT_RADIUS)


@pytest.fixture
def ocp():
    return OcpConfig()


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch):
    """Keep ECBF_SWARM_* variables of the calling shell out of the tests"""
    import os
    for name in list(os.environ):
        if name.startswith(config.ENV_PREFIX):
            monkeypatch.delenv(name)
