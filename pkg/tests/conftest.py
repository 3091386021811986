import logging

import numpy as np
import pytest

from flatdisc import VtolModel
from flatdisc.core import Block, ContinuousSystem, TriangularForm


@pytest.fixture(autouse=True)
def _quiet_faults():
    # closed-loop runs log controller faults; the tests inspect records instead
    logging.getLogger("flatdisc").setLevel(logging.CRITICAL)
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def vtol():
    return VtolModel()


def double_integrator_tf():
    """x1' = x2, x2' = u with flat output x1 (two blocks)."""
    return TriangularForm((
        Block(1, 0, lambda x, u: x[1:2], flat=(0,), name="f_2"),
        Block(1, 1, lambda x, u: u[0:1], name="f_1"),
    ), equilibrium=(np.zeros(2), np.zeros(1)), name="double-integrator")


@pytest.fixture
def double_integrator():
    return double_integrator_tf()


@pytest.fixture
def linear_system():
    A = np.array([[0.0, 1.0], [-2.0, -0.5]])
    B = np.array([[0.0], [1.0]])
    sys = ContinuousSystem(2, 1, lambda x, u: A @ x + B @ u, equilibrium=(np.zeros(2), np.zeros(1)),
                           jacobian_x=lambda x, u: A, name="linear")
    return sys, A, B
