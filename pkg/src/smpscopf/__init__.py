"""Stochastic multi-period AC security-constrained OPF with storage and flexible loads."""
from .formulation import DispatchSchedule, ScopfModel
from .grid import Network, load_case, parse_case, to_per_unit
from .ipm import SolverOptions, SolverResult, solve
from .scenarios import ScenarioSet, load_scenarios, read_scenarios, replicate_scenarios
from .validation import check_exclusivity, check_feasibility

__all__ = [
    "DispatchSchedule", "ScopfModel", "Network", "load_case", "parse_case", "to_per_unit",
    "SolverOptions", "SolverResult", "solve", "ScenarioSet", "load_scenarios",
    "read_scenarios", "replicate_scenarios", "check_exclusivity", "check_feasibility",
]
