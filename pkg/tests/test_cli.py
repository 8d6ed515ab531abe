import csv
import json

import numpy as np
import pytest

from smpscopf.cli import (
    EXIT_INPUT, EXIT_NOT_CONVERGED, EXIT_OK, RunConfig, build_parser, build_study, main, run,
    scalability_run, solve_study, sweep_res_capacity,
)
from smpscopf.data import case_path
from smpscopf.report import PARTS, cost_report, export_schedules, fmt, worker_count

SMALL = dict(n_scenarios=2, periods=4, states=2)


def read_costs(path):
    with open(path) as fh:
        return {r["part"]: r for r in csv.DictReader(fh)}


def test_run_writes_costs(tmp_path):
    code = run(RunConfig(res_capacity=0.0, out=str(tmp_path), **SMALL))
    assert code == EXIT_OK
    costs = read_costs(tmp_path / "costs.csv")
    assert float(costs["total"]["total"]) > 0
    # whole euros, as in the published tables
    assert round(float(costs["LC"]["total"])) == 0 and round(float(costs["GC"]["total"])) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["status"] == "converged" and summary["feasibility"]["passed"]


def test_missing_scenario_file(tmp_path):
    code = run(RunConfig(scenarios=str(tmp_path / "nope.csv"), out=str(tmp_path)))
    assert code == EXIT_INPUT
    assert json.loads((tmp_path / "summary.json").read_text())["status"] == "input-error"


def test_iteration_limit_keeps_artifacts(tmp_path):
    code = run(RunConfig(max_iter=1, out=str(tmp_path), **SMALL))
    assert code == EXIT_NOT_CONVERGED
    assert (tmp_path / "costs.csv").exists()
    assert any((tmp_path / "schedules").iterdir())


def test_toggle_without_devices(tmp_path):
    text = case_path("five_bus.yaml").read_text()
    head = text.split("storage:")[0]
    tail = text.split("res_plants:")[1]
    case = tmp_path / "plain.yaml"
    case.write_text(head + "res_plants:" + tail)
    assert run(RunConfig(case=str(case), enable_ess=True, **SMALL)) == EXIT_INPUT


def test_cost_report_reconciles():
    study = build_study(RunConfig(enable_ess=True, enable_fl=True, **SMALL))
    oc = solve_study(study)
    rep = oc.costs
    assert rep.total == pytest.approx(oc.objective, rel=1e-6)
    assert all(rep.part(p) >= 0 for p in PARTS)
    # the direct evaluation at an arbitrary point agrees as well
    x = study.model.initial_point()
    assert cost_report(study.model, x).total == pytest.approx(study.model.eval_objective(x), rel=1e-9)


def test_export_families(tmp_path):
    study = build_study(RunConfig(enable_ess=True, **SMALL))
    oc = solve_study(study)
    files = {p.name for p in export_schedules(oc.schedule, tmp_path)}
    assert "soc_s2_k1.csv" in files and "gen_s1_k0.csv" in files
    assert not any(f.startswith("fl_") for f in files)
    with open(tmp_path / "soc_s1_k1.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 4


def test_no_storage_no_soc_files(tmp_path):
    oc = solve_study(build_study(RunConfig(**SMALL)))
    files = {p.name for p in export_schedules(oc.schedule, tmp_path)}
    assert not any(f.startswith("soc_") for f in files)
    assert {f"gen_s{s}_k0.csv" for s in (1, 2)} <= files


def test_sweep_rows_in_order():
    assert sweep_res_capacity(RunConfig(**SMALL), []) == []
    rows = sweep_res_capacity(RunConfig(**SMALL), [200.0, 0.0])
    assert [r.capacity for r in rows] == [200.0, 0.0]
    assert round(rows[1].costs.part("LC")) == 0 and round(rows[1].costs.part("GC")) == 0
    assert rows[0].costs.part("CG") < rows[1].costs.part("CG")


def test_scalability_rows():
    rows = scalability_run(RunConfig(periods=4, states=2), [1, 2, 3])
    assert [r.scenarios for r in rows] == [1, 2, 3]
    assert rows[0].variables < rows[1].variables < rows[2].variables
    assert rows[1].variables == 2 * rows[0].variables
    assert max(r.iterations for r in rows) <= 3 * min(r.iterations for r in rows)


def test_parser_flags():
    ns = build_parser().parse_args(
        ["--mode", "redispatch", "--res-capacity", "300", "--enable-ess", "--enable-fl",
         "--replicate", "20", "--tol", "1e-6", "--max-iter", "50", "--out", "x",
         "--sweep", "0:1000:100", "--scalability", "10,20,30"]
    )
    assert ns.sweep == [100.0 * i for i in range(11)]
    assert ns.scalability == [10, 20, 30]
    assert ns.mode == "redispatch" and ns.enable_ess and ns.enable_fl


def test_main_sweep_table(tmp_path, capsys):
    code = main(["--n-scenarios", "1", "--periods", "3", "--states", "1",
                 "--sweep", "0:100:100", "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "sweep.csv")))
    assert len(rows) == 3 and rows[1][0] == "0" and rows[2][0] == "100"


def test_worker_cap(monkeypatch):
    monkeypatch.setenv("SCOPF_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.delenv("SCOPF_THREADS")
    assert worker_count(0) == 1


def test_fixed_format():
    assert fmt(1693208.4) == "1.69321e+06"
    assert fmt(-0.0) == "0"
    assert fmt(0.1 + 0.2) == "0.3"


def test_determinism_small(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run(RunConfig(enable_ess=True, out=str(a), **SMALL))
    run(RunConfig(enable_ess=True, out=str(b), **SMALL))
    for f in sorted(p.relative_to(a) for p in a.rglob("*.*")):
        if f.name == "timing.txt":
            continue
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
