"""One test per acceptance criterion, at the stated tolerances.

Full 5-bus solves (|S|=10, |T|=24, |K|=7) are shared through a module
fixture; together they take several minutes.
"""
import time

import numpy as np
import pytest

from conftest import small_model
from smpscopf.cli import RunConfig, build_study, run, solve_study
from smpscopf.ipm import SolverOptions, solve
from smpscopf.scenarios import ScenarioSet
from smpscopf.formulation import ScopfModel
from smpscopf.grid import to_per_unit
from smpscopf.validation import brute_force_mini, fd_check, mini_case, random_interior_point

PAPER_RC0_TOTAL = 1_693_208.0
CAPACITIES = [100.0 * i for i in range(11)]
CASES = {1: dict(enable_ess=True), 2: dict(enable_fl=True), 3: dict(enable_ess=True, enable_fl=True)}


def curtailment(costs):
    return costs.part("LC") + costs.part("GC")


@pytest.fixture(scope="module")
def full():
    """Every full-case solve the suite inspects, keyed by a label."""
    out = {}

    def go(label, **kw):
        t0 = time.perf_counter()
        oc = solve_study(build_study(RunConfig(**kw)))
        oc.wall_seconds = time.perf_counter() - t0
        out[label] = oc

    for c in CAPACITIES:
        go(("case0", c), res_capacity=c)
    for case, kw in CASES.items():
        go((f"case{case}", 1000.0), res_capacity=1000.0, **kw)
    go("redispatch-rc0", res_capacity=0.0, mode="redispatch")
    for count in (2, 4, 6):
        go(("replicate", count), n_scenarios=2, replicate=count, enable_ess=True, enable_fl=True)
    return out


def test_criterion_1_derivatives():
    t0 = time.perf_counter()
    m = small_model(S=2, T=4, K=2, ess=True, fl=True)
    p = m.problem()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        x = random_interior_point(p, rng)
        lam = rng.standard_normal(p.m)
        rep = fd_check(p, x, h=1e-6, lam=lam)
        worst = max(worst, rep.max_rel_error)
    assert worst <= 1e-6, worst
    assert time.perf_counter() - t0 < 60.0


def test_criterion_2_feasibility_audit(full):
    failed = {}
    n = 0
    for label, oc in full.items():
        if oc.status != "converged":
            continue
        n += 1
        rep = oc.feasibility
        assert len(rep.families) == 22
        if rep.max_violation > 1e-5:
            failed[label] = (rep.max_violation, rep.failing())
        assert "14" in rep.families and "18" in rep.families
    assert n == len(full)
    assert not failed, failed


def test_criterion_3_brute_force():
    t0 = time.perf_counter()
    for load in ((100.0, 30.0, 0.0, 0.0), (300.0, 100.0, 50.0, 20.0)):
        net = mini_case(load)
        grid = brute_force_mini(net, resolution=200)
        m = ScopfModel(to_per_unit(net), ScenarioSet(np.zeros((1, 1)), np.ones(1)))
        res = solve(m.problem(), SolverOptions(verbose=False))
        assert res.converged
        assert abs(res.objective - grid.cost) / grid.cost <= 1e-3, (load, res.objective, grid.cost)
    assert time.perf_counter() - t0 < 60.0


def test_criterion_4_table_ordering(full):
    lc = {c: round(full[("case0", c)].costs.part("LC")) for c in CAPACITIES}
    part_a = all(lc[c] == 0 for c in CAPACITIES[:7]) and all(lc[c] > 0 for c in CAPACITIES[7:])
    totals = [full[("case0", 1000.0)].costs.total] + [
        full[(f"case{k}", 1000.0)].costs.total for k in (1, 2, 3)
    ]
    part_b = all(b <= a for a, b in zip(totals, totals[1:]))
    c0 = curtailment(full[("case0", 1000.0)].costs)
    c3 = curtailment(full[("case3", 1000.0)].costs)
    part_c = c3 < 0.5 * c0
    slow = max(oc.wall_seconds for oc in full.values())
    verdict = (
        f"(a) {'ok' if part_a else 'FAIL'} LC by RC0..RC10 = {[lc[c] for c in CAPACITIES]}; "
        f"(b) {'ok' if part_b else 'FAIL'} totals case0..case3 = {[round(t) for t in totals]}; "
        f"(c) {'ok' if part_c else 'FAIL'} curtailment case0/case3 = {round(c0)}/{round(c3)}; "
        f"slowest solve {slow:.1f} s"
    )
    assert part_a and part_b and part_c and slow < 900.0, verdict


def test_criterion_5_paper_value(full):
    total = full[("case0", 0.0)].costs.total
    alt = full["redispatch-rc0"]
    rel = (total - PAPER_RC0_TOTAL) / PAPER_RC0_TOTAL
    report = dict(production_total=total, relative_gap=rel, redispatch_total=alt.costs.total,
                  redispatch_status=alt.status)
    if abs(rel) <= 0.05:
        return
    # outside 5 %: the alternative-mode value is reported and criterion 4 decides
    assert alt.status == "converged", report
    try:
        test_criterion_4_table_ordering(full)
    except AssertionError as exc:
        raise AssertionError(f"{report}; fallback to criterion 4 failed: {exc}") from None


def test_criterion_6_exclusivity(full):
    bad = {
        label: (oc.exclusivity.ess_max_overlap, oc.exclusivity.fl_max_overlap)
        for label, oc in full.items()
        if oc.status == "converged" and not oc.exclusivity.passed
    }
    assert not bad, bad


def test_criterion_7_replication(full):
    rows = {c: full[("replicate", c)] for c in (2, 4, 6)}
    assert all(oc.status == "converged" for oc in rows.values())
    base = rows[2]
    for c in (4, 6):
        assert abs(rows[c].costs.total - base.costs.total) <= 1e-3 * base.costs.total
        assert rows[c].n_vars == base.n_vars * c // 2
    its = [oc.iterations for oc in rows.values()]
    assert max(its) <= 3 * min(its), its


def test_criterion_8_determinism(tmp_path):
    cfg = dict(n_scenarios=2, states=3, res_capacity=800.0, enable_ess=True, enable_fl=True)
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(RunConfig(out=str(a), **cfg)) == 0
    assert run(RunConfig(out=str(b), **cfg)) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "timing.txt")
    assert files
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
