"""Bundled 5-bus case and wind profiles."""
from __future__ import annotations

from dataclasses import replace
from importlib import resources

from ..grid import Network, parse_case
from ..scenarios import ScenarioSet, load_scenarios

# generator operating point listed with the 5-bus data, MW
TABLE_DISPATCH = {"G3": 700.0, "G4": 600.0, "G5": 333.8}


def case_path(name: str = "five_bus.yaml"):
    return resources.files(__name__).joinpath(name)


def five_bus() -> Network:
    return parse_case(case_path("five_bus.yaml").read_text(encoding="utf-8"))


def with_market_schedule(net: Network, T: int = 24, dispatch=None) -> Network:
    """Flat market schedule for redispatch mode.

    The schedule defaults to :data:`TABLE_DISPATCH`; the redispatch price of
    each unit is taken as its linear cost coefficient. Both are assumptions:
    the source data gives neither.
    """
    dispatch = TABLE_DISPATCH if dispatch is None else dispatch
    gens = tuple(
        replace(g, p_market=(float(dispatch[g.id]),) * T,
                redispatch_cost=g.cost_b if g.redispatch_cost is None else g.redispatch_cost)
        for g in net.generators
    )
    return replace(net, generators=gens)


def wind_scenarios(T: int = 24) -> ScenarioSet:
    return load_scenarios(case_path("wind_scenarios.csv").read_text(encoding="utf-8"), T)
