import dataclasses

import numpy as np
import pytest

from conftest import small_model, small_network
from smpscopf.ipm import SolverOptions, solve
from smpscopf.nlp import NlpProblem, QuadraticRows, qcqp_problem
from smpscopf.validation import (
    GridInfeasible, brute_force_mini, check_exclusivity, check_feasibility, fd_check,
    mini_case, random_interior_point,
)

QUIET = SolverOptions(verbose=False)


@pytest.fixture(scope="module")
def solved():
    m = small_model()
    res = solve(m.problem(), QUIET)
    assert res.converged
    net = small_network(2, True, True)
    return m, net, res.schedule


def audit(m, net, sch, tol=1e-6):
    return check_feasibility(net, m.scenarios, None, sch, tol, loads=m.loads)


def test_converged_solution_passes(solved):
    m, net, sch = solved
    rep = audit(m, net, sch)
    assert rep.passed, rep.failing()
    assert set(rep.families) == {str(i) for i in range(2, 24)}


def test_forced_voltage_fails_magnitude_family(solved):
    m, net, sch = solved
    bad = dataclasses.replace(sch, e=sch.e.copy(), f=sch.f.copy())
    bad.e[0, 0, 0, 1] = 1.10
    bad.f[0, 0, 0, 1] = 0.0
    rep = audit(m, net, bad)
    assert "9" in rep.failing()
    names = [(o.eq, o.element) for o in rep.offenders]
    assert ("9", "2") in names


def test_all_zero_schedule_unbalanced(solved):
    m, net, sch = solved
    zero = dataclasses.replace(
        sch, **{f: np.zeros_like(getattr(sch, f)) for f in (
            "p_gen", "q_gen", "e", "f", "p_ch", "p_dis", "soc", "p_inc", "p_dec",
            "res_curtail", "load_curtail", "p_inj", "q_inj")}
    )
    rep = audit(m, net, zero)
    assert "2" in rep.failing()
    loaded = {o.element for o in rep.offenders if o.eq == "2"}
    assert loaded <= {"1", "2", "4"} and {"1", "2"} & loaded


def test_shape_mismatch_rejected(solved):
    m, net, sch = solved
    with pytest.raises(ValueError):
        check_feasibility(net, m.scenarios.first(1), None, sch)


def test_report_serializes(solved):
    import json
    m, net, sch = solved
    d = json.loads(audit(m, net, sch).to_json())
    assert d["passed"] is True


def _linear_problem():
    rng = np.random.default_rng(0)
    n, m = 4, 3
    A = rng.standard_normal((m, n))
    r, c = np.nonzero(A)
    cons = QuadraticRows(m, n, np.zeros(m), (r, c, A[r, c]), ([], [], [], []))
    obj = QuadraticRows(1, n, [0.0], (np.zeros(n, int), np.arange(n), np.ones(n)), ([], [], [], []))
    return qcqp_problem(obj, cons, np.full(n, -1.0), np.full(n, 1.0), np.zeros(m), np.zeros(m), np.zeros(n))


def test_fd_linear_exact():
    p = _linear_problem()
    rep = fd_check(p, np.full(p.n, 0.3))
    assert rep.max_rel_error < 1e-9


def test_fd_flags_corrupted_jacobian():
    m = small_model(S=1, T=2, K=1)
    p = m.problem()
    good = p.jac_values

    def broken(x):
        v = good(x).copy()
        v[17] = 1.5 * v[17] + 1.0
        return v

    bad = dataclasses.replace(p, jac_values=broken)
    x = random_interior_point(p, np.random.default_rng(1))
    rep = fd_check(bad, x)
    assert rep.flagged(1e-2)
    assert rep.jacobian_error > 1e-2
    assert rep.where["jacobian"] == (int(p.jac_rows[17]), int(p.jac_cols[17]))


def test_brute_force_no_load():
    net = mini_case(load=(0.0, 0.0, 0.0, 0.0))
    ga = dataclasses.replace(net.generators[0], p_min=0.0)
    net = dataclasses.replace(net, generators=(ga, net.generators[1]))
    res = brute_force_mini(net, resolution=60)
    assert res.cost == pytest.approx(ga.cost_c + net.generators[1].cost_c, abs=1e-6)


def test_brute_force_infeasible():
    with pytest.raises(GridInfeasible):
        brute_force_mini(mini_case(load=(1000.0, 0.0, 0.0, 0.0)), resolution=40)


def test_exclusivity_offender():
    m = small_model(S=1, T=2, K=1)
    x = m.initial_point()
    x[m.fam("ch")] = 0.0
    x[m.fam("dis")] = 0.0
    sch = m.schedule(x)
    sch.p_ch[0, 0, 1, 0] = 10.0
    sch.p_dis[0, 0, 1, 0] = 10.0
    rep = check_exclusivity(sch)
    assert not rep.passed
    assert rep.worst_ess == (0, 0, 1, 0)
    assert rep.ess_max_overlap == pytest.approx(0.1)


def test_exclusivity_all_zero():
    m = small_model(S=1, T=2, K=1)
    x = m.initial_point()
    for f in ("ch", "dis", "inc", "dec"):
        x[m.fam(f)] = 0.0
    assert check_exclusivity(m.schedule(x)).passed
