from importlib import resources

import numpy as np
import pytest

from aerialwbc import SystemState, load_gains, load_model
from aerialwbc.kinematics import rotation_exp

DATA = resources.files("aerialwbc") / "data"


@pytest.fixture(scope="session")
def model():
    return load_model(DATA / "model.yaml")


@pytest.fixture(scope="session")
def gains(model):
    return load_gains(DATA / "gains.yaml", n=model.n_joints)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def random_state(model, rng, vel_scale=1.0):
    d = 6 + model.n_joints
    return SystemState(
        p_B=rng.normal(size=3),
        R=rotation_exp(rng.normal(size=3)),
        q_M=rng.uniform(model.q_min * 0.8, model.q_max * 0.8),
        nu=vel_scale * rng.normal(size=d),
    )


def flow_state(s, t):
    """Exact flow under constant generalized velocity (nudot = 0)."""
    return SystemState(
        p_B=s.p_B + s.v_B * t,
        R=s.R @ rotation_exp(s.omega_B * t),
        q_M=s.q_M + s.qd_M * t,
        nu=s.nu.copy(),
    )


def data_path(name: str) -> str:
    return str(DATA / name)
