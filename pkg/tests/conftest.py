import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spnwb import sample_networks as nets
from spnwb.network import enumerate_extreme_allocations, input_output_matrix
from spnwb.planning import check_complete_resource_pooling, solve_static_planning

settings.register_profile(
    "ci", derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


class NetData:
    """A validated network bundled with its first-order data."""

    def __init__(self, spec):
        self.spec = spec
        self.R = input_output_matrix(spec)
        self.vertices = enumerate_extreme_allocations(spec)
        self.plan = solve_static_planning(self.R, spec)
        self.dual = check_complete_resource_pooling(self.R, spec)

    @property
    def rho(self):
        return self.plan.rho

    @property
    def y(self):
        return self.dual.y


@pytest.fixture(scope="session")
def n1():
    return NetData(nets.n1())


@pytest.fixture(scope="session")
def n2():
    return NetData(nets.n2())


@pytest.fixture(scope="session")
def n1_crit():
    return NetData(nets.n1_critical())


@pytest.fixture(scope="session")
def n2_crit():
    return NetData(nets.n2_critical())


@pytest.fixture(scope="session")
def parallel_pair():
    return NetData(nets.validate_network(nets.parallel_single_queues(2)))
