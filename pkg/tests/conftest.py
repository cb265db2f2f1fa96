import math

import pytest

from dpps.algorithms import DistributedContext
from dpps.network import BranchRecord, BusRecord, GeneratorRecord, NetworkData, load_case
from dpps.partition import build_partition, fixed_zone_assignment


def two_bus(demand=0.5, r=0.0, x=0.1, b_charge=0.0, c1=10.0, c2=0.0, q_demand=0.0, gen_at_load=False):
    """Generator at bus 1, load at bus 2, one line. Per-unit, base 100 MVA."""
    buses = (
        BusRecord(1, 0.9, 1.1, 0.0, 0.0, 0.0, 0.0),
        BusRecord(2, 0.9, 1.1, demand, q_demand, 0.0, 0.0),
    )
    gens = [GeneratorRecord(0, 0.0, 2.0, -2.0, 2.0, c1, c2)]
    if gen_at_load:
        gens.append(GeneratorRecord(1, 0.0, 0.0, -2.0, 2.0, 0.0, 0.0))
    br = (BranchRecord(0, 1, r, x, b_charge),)
    return NetworkData(100.0, buses, tuple(gens), br, name="twobus")


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case118():
    return load_case("case118")


@pytest.fixture(scope="session")
def part14(case14):
    return build_partition(case14, fixed_zone_assignment(case14))


@pytest.fixture(scope="session")
def ctx14(case14, part14):
    return DistributedContext(case14, part14)


@pytest.fixture
def toy():
    return two_bus()


@pytest.fixture
def toy_split(toy):
    return toy, build_partition(toy, [0, 1])


INF = math.inf
