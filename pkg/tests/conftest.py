from dataclasses import replace

import pytest

from smpscopf.data import five_bus, wind_scenarios
from smpscopf.formulation import ScopfModel
from smpscopf.grid import ContingencySpec, to_per_unit


def small_network(states=2, ess=False, fl=False, capacity=None):
    net = five_bus().without(storage=not ess, flexible_loads=not fl)
    if capacity is not None:
        net = net.with_res_capacity(capacity)
    return replace(net, contingencies=ContingencySpec(net.contingencies.outages[:states]))


def small_model(S=2, T=4, K=2, ess=True, fl=True, mode="production", capacity=None, net=None):
    net = net or small_network(K, ess, fl, capacity)
    sset = wind_scenarios().first(S).subset(T)
    return ScopfModel(to_per_unit(net), sset, mode=mode)


@pytest.fixture(scope="session")
def net5():
    return five_bus()


@pytest.fixture(scope="session")
def scen():
    return wind_scenarios()
