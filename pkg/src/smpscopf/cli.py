"""Batch front end: case + scenarios + options in, cost tables and schedules out.

Exit codes: 0 converged and audited feasible, 2 solver did not converge,
3 feasibility audit failed, 4 input error.
"""
from __future__ import annotations

import argparse
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

from .data import case_path, with_market_schedule
from .formulation import PRODUCTION, REDISPATCH, ScopfModel, objective_mode
from .grid import CaseError, ContingencySpec, Network, load_case, to_per_unit
from .ipm import SolverOptions, solve
from .report import (
    SweepRow, TimingRow, cost_report, export_schedules, worker_count, write_json, write_table,
)
from .scenarios import ScenarioError, ScenarioSet, read_scenarios, replicate_scenarios
from .validation import check_exclusivity, check_feasibility

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_AUDIT, EXIT_INPUT = 0, 2, 3, 4
AUDIT_TOL = 1e-5


class InputError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    case: Optional[str] = None  # bundled 5-bus case when None
    scenarios: Optional[str] = None  # bundled wind profiles when None
    mode: str = PRODUCTION
    res_capacity: Optional[float] = None  # MW per RES plant; case value when None
    enable_ess: bool = False
    enable_fl: bool = False
    replicate: Optional[int] = None
    n_scenarios: Optional[int] = None  # keep the first n scenarios, equiprobable
    horizon: int = 24  # periods per scenario block in the profile file
    periods: Optional[int] = None  # solve only the first n periods
    states: Optional[int] = None  # keep the first n network states (0 = intact)
    tol: float = 1e-5
    max_iter: int = 500
    mu_strategy: str = "monotone"
    curtailment_factor: float = 10.0
    base_mva: float = 100.0
    out: Optional[str] = None
    verbose: bool = False


@dataclass
class Study:
    config: RunConfig
    net: Network
    scenarios: ScenarioSet
    model: ScopfModel


def load_inputs(config: RunConfig):
    """Network and scenario set after toggles; raises :class:`InputError`."""
    try:
        objective_mode(config.mode)
        path = config.case or str(case_path("five_bus.yaml"))
        net = load_case(path)
        spath = config.scenarios or str(case_path("wind_scenarios.csv"))
        if not Path(str(spath)).exists():
            raise InputError(f"scenario file not found: {spath}")
        sset = read_scenarios(spath, T=config.horizon)
        if config.periods is not None:
            if not 1 <= config.periods <= config.horizon:
                raise InputError(f"periods must lie in [1, {config.horizon}]")
            sset = sset.subset(config.periods)
    except (CaseError, ScenarioError, OSError) as exc:
        raise InputError(str(exc)) from exc
    except ValueError as exc:
        raise InputError(str(exc)) from exc

    if config.case is None and objective_mode(config.mode) == REDISPATCH:
        net = with_market_schedule(net, sset.n_periods)
    if config.enable_ess and not net.storage:
        raise InputError("--enable-ess given but the case has no storage units")
    if config.enable_fl and not net.flexible_loads:
        raise InputError("--enable-fl given but the case has no flexible loads")
    net = net.without(storage=not config.enable_ess, flexible_loads=not config.enable_fl)
    if config.res_capacity is not None:
        if config.res_capacity < 0:
            raise InputError("RES capacity must be nonnegative")
        net = net.with_res_capacity(config.res_capacity)
    if config.states is not None:
        if not 1 <= config.states <= len(net.contingencies):
            raise InputError(f"states must lie in [1, {len(net.contingencies)}]")
        net = replace(net, contingencies=ContingencySpec(net.contingencies.outages[: config.states]))
    if config.n_scenarios is not None:
        if not 1 <= config.n_scenarios <= sset.n_scenarios:
            raise InputError(f"n_scenarios must lie in [1, {sset.n_scenarios}]")
        sset = sset.first(config.n_scenarios)
    if config.replicate is not None:
        if config.replicate < 1:
            raise InputError("replicate must be >= 1")
        sset = replicate_scenarios(sset, config.replicate)
    return net, sset


def build_study(config: RunConfig) -> Study:
    net, sset = load_inputs(config)
    try:
        model = ScopfModel(
            to_per_unit(net, config.base_mva), sset, mode=config.mode,
            curtailment_factor=config.curtailment_factor,
        )
    except (CaseError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    return Study(config, net, sset, model)


def solver_options(config: RunConfig) -> SolverOptions:
    return SolverOptions(
        tol=config.tol, max_iter=config.max_iter, mu_strategy=config.mu_strategy,
        verbose=config.verbose, log=sys.stderr,
    )


@dataclass
class Outcome:
    code: int
    status: str
    iterations: int
    wall_seconds: float
    costs: object = None
    feasibility: object = None
    exclusivity: object = None
    schedule: object = None
    n_vars: int = 0
    n_cons: int = 0
    objective: float = float("nan")
    message: str = ""


def solve_study(study: Study) -> Outcome:
    model = study.model
    res = solve(model.problem(), solver_options(study.config))
    sch = model.schedule(res.x)
    costs = cost_report(model, res.x)
    feas = check_feasibility(study.net, study.scenarios, None, sch, tol=AUDIT_TOL, loads=model.loads)
    excl = check_exclusivity(sch)
    if not res.converged:
        code = EXIT_NOT_CONVERGED
    elif not feas.passed:
        code = EXIT_AUDIT
    else:
        code = EXIT_OK
    return Outcome(code, res.status, res.iterations, res.wall_time, costs, feas, excl, sch,
                   model.n, model.m, res.objective)


def _config_record(config: RunConfig) -> dict:
    rec = asdict(config)
    rec.pop("out")
    rec.pop("verbose")
    return rec


def write_artifacts(out_dir, config: RunConfig, oc: Outcome) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "config": _config_record(config),
        "status": oc.status,
        "exit_code": oc.code,
        "message": oc.message,
        "iterations": oc.iterations,
        "variables": oc.n_vars,
        "constraints": oc.n_cons,
    }
    if oc.costs is not None:
        write_table(out / "costs.csv", ["part", "normal", "post_contingency", "total"],
                    list(oc.costs.rows())[1:])
        summary["objective"] = oc.objective
        summary["costs"] = oc.costs.to_dict()
    if oc.feasibility is not None:
        summary["feasibility"] = oc.feasibility.to_dict()
    if oc.exclusivity is not None:
        summary["exclusivity"] = {
            "eps": oc.exclusivity.eps,
            "ess_max_overlap": oc.exclusivity.ess_max_overlap,
            "fl_max_overlap": oc.exclusivity.fl_max_overlap,
            "passed": oc.exclusivity.passed,
        }
    write_json(out / "summary.json", summary)
    if oc.schedule is not None:
        export_schedules(oc.schedule, out / "schedules")
    # wall time is not reproducible, so it stays out of the numeric artifacts
    (out / "timing.txt").write_text(f"wall_seconds {oc.wall_seconds:.3f}\n", encoding="utf-8")


def run(config: RunConfig) -> int:
    """Single solve; writes artifacts to ``config.out`` when set."""
    try:
        study = build_study(config)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        if config.out:
            write_artifacts(config.out, config, Outcome(EXIT_INPUT, "input-error", 0, 0.0, message=str(exc)))
        return EXIT_INPUT
    oc = solve_study(study)
    if oc.code == EXIT_NOT_CONVERGED:
        print(f"solver stopped with status {oc.status} after {oc.iterations} iterations",
              file=sys.stderr)
    elif oc.code == EXIT_AUDIT:
        print("feasibility audit failed: " + ", ".join(oc.feasibility.failing()), file=sys.stderr)
    if config.out:
        write_artifacts(config.out, config, oc)
    return oc.code


# ----------------------------------------------------------------------
# batch studies

def _sweep_one(config: RunConfig) -> SweepRow:
    try:
        oc = solve_study(build_study(config))
    except InputError as exc:
        return SweepRow(config.res_capacity, "input-error", None, 0, False, str(exc))
    return SweepRow(config.res_capacity, oc.status, oc.costs, oc.iterations,
                    oc.feasibility.passed)


def _map(fn, items):
    workers = worker_count(len(items))
    if workers == 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def sweep_res_capacity(config: RunConfig, capacities: Sequence[float]) -> list[SweepRow]:
    """One solve per RES capacity; rows follow the input order."""
    configs = [replace(config, res_capacity=float(c), out=None) for c in capacities]
    return _map(_sweep_one, configs)


def _timing_one(config: RunConfig) -> TimingRow:
    t0 = time.perf_counter()
    try:
        oc = solve_study(build_study(config))
    except InputError:
        return TimingRow(config.replicate or 0, float("nan"), 0, 0, 0, 0.0, "input-error")
    return TimingRow(config.replicate, oc.costs.total, oc.n_vars, oc.n_cons, oc.iterations,
                     time.perf_counter() - t0, oc.status)


def scalability_run(config: RunConfig, counts: Sequence[int]) -> list[TimingRow]:
    """Replicate the configured scenario set to each count and solve."""
    configs = [replace(config, replicate=int(c), out=None) for c in counts]
    return _map(_timing_one, configs)


# ----------------------------------------------------------------------
# command line

def _range(text: str) -> list[float]:
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected a:b:step") from exc
    if step <= 0 or b < a:
        raise argparse.ArgumentTypeError("expected a <= b and step > 0")
    n = int(round((b - a) / step))
    vals = [a + i * step for i in range(n + 1)]
    return [v for v in vals if v <= b + 1e-9 * max(1.0, abs(b))]


def _counts(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected n1,n2,...") from exc
    if not vals or min(vals) < 1:
        raise argparse.ArgumentTypeError("counts must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smpscopf", description=__doc__.splitlines()[0])
    ap.add_argument("--case", help="YAML case file (default: bundled 5-bus case)")
    ap.add_argument("--scenarios", help="scenario CSV (default: bundled wind profiles)")
    ap.add_argument("--mode", choices=("production", "redispatch"), default="production")
    ap.add_argument("--res-capacity", type=float, metavar="MW")
    ap.add_argument("--enable-ess", action="store_true")
    ap.add_argument("--enable-fl", action="store_true")
    ap.add_argument("--replicate", type=int, metavar="N")
    ap.add_argument("--n-scenarios", type=int, metavar="N", help="keep the first N scenarios")
    ap.add_argument("--horizon", type=int, default=24, help="periods per block in the profile file")
    ap.add_argument("--periods", type=int, metavar="T", help="solve the first T periods")
    ap.add_argument("--states", type=int, metavar="K", help="keep the first K network states")
    ap.add_argument("--tol", type=float, default=1e-5)
    ap.add_argument("--max-iter", type=int, default=500)
    ap.add_argument("--mu-strategy", choices=("monotone", "adaptive"), default="monotone")
    ap.add_argument("--out", metavar="DIR")
    ap.add_argument("--sweep", type=_range, metavar="a:b:step", help="RES capacity sweep in MW")
    ap.add_argument("--scalability", type=_counts, metavar="n1,n2,...")
    ap.add_argument("-v", "--verbose", action="store_true", help="iteration log on stderr")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        case=ns.case, scenarios=ns.scenarios, mode=ns.mode, res_capacity=ns.res_capacity,
        enable_ess=ns.enable_ess, enable_fl=ns.enable_fl, replicate=ns.replicate,
        n_scenarios=ns.n_scenarios, horizon=ns.horizon, periods=ns.periods, states=ns.states, tol=ns.tol,
        max_iter=ns.max_iter, mu_strategy=ns.mu_strategy, out=ns.out, verbose=ns.verbose,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    ns = build_parser().parse_args(argv)
    config = config_from_args(ns)
    if ns.sweep is None and ns.scalability is None:
        code = run(config)
        if config.out and code in (EXIT_OK, EXIT_NOT_CONVERGED, EXIT_AUDIT):
            print((Path(config.out) / "costs.csv").read_text(), end="")
        return code

    code = EXIT_OK
    if ns.sweep is not None:
        rows = sweep_res_capacity(config, ns.sweep)
        table = [r.cells() for r in rows]
        if config.out:
            write_table(Path(config.out) / "sweep.csv", SweepRow.HEADER, table)
        _print_table(SweepRow.HEADER, table)
        code = max(code, _batch_code([r.status for r in rows], [r.feasible for r in rows]))
    if ns.scalability is not None:
        rows = scalability_run(config, ns.scalability)
        table = [r.cells() for r in rows]
        if config.out:
            write_table(Path(config.out) / "scalability.csv", TimingRow.HEADER, table)
        _print_table(TimingRow.HEADER, table)
        code = max(code, _batch_code([r.status for r in rows], [True] * len(rows)))
    return code


def _batch_code(statuses, feasible) -> int:
    if any(s == "input-error" for s in statuses):
        return EXIT_INPUT
    if any(s != "converged" for s in statuses):
        return EXIT_NOT_CONVERGED
    if not all(feasible):
        return EXIT_AUDIT
    return EXIT_OK


def _print_table(header, rows) -> None:
    print(",".join(header))
    for r in rows:
        print(",".join(r))


if __name__ == "__main__":
    sys.exit(main())
