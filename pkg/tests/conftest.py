import numpy as np
import pytest

from coanda import fem, ns
from coanda.mesh import build_channel_mesh


@pytest.fixture(scope="session")
def tiny_space():
    return fem.TaylorHoodSpace(build_channel_mesh("tiny"))


@pytest.fixture(scope="session")
def coarse_space():
    return fem.TaylorHoodSpace(build_channel_mesh("coarse"))


@pytest.fixture(scope="session")
def tiny_ip(tiny_space):
    return fem.build_inner_products(tiny_space)


@pytest.fixture(scope="session")
def coarse_ip(coarse_space):
    return fem.build_inner_products(coarse_space)


@pytest.fixture(scope="session")
def coarse_state_op(coarse_space, coarse_ip):
    return ns.StateOperator(coarse_space, coarse_ip)


@pytest.fixture(scope="session")
def tiny_state_op(tiny_space, tiny_ip):
    return ns.StateOperator(tiny_space, tiny_ip)


@pytest.fixture(scope="session")
def coarse_stokes_target(coarse_state_op):
    return ns.make_target(coarse_state_op, "symmetric")


@pytest.fixture(scope="session")
def tiny_stokes_target(tiny_state_op):
    return ns.make_target(tiny_state_op, "symmetric")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
