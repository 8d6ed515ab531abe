import numpy as np
import pytest

from conftest import small_model
from smpscopf.ipm import (
    CONVERGED, ITERATION_LIMIT, Iterate, KktPatternError, Prepared, SolverOptions,
    convergence_check, fraction_to_boundary, kkt_assemble, line_search, solve,
)
from smpscopf.ipm.solver import KktSystem, MeritState, _evaluate, _initial_iterate
from smpscopf.nlp import NlpProblem

QUIET = SolverOptions(verbose=False)


def nlp(n, f, g, hdiag, cons=None, jac=None, jr=(), jc=(), c_lo=(), c_hi=(),
        x_lo=None, x_hi=None, x0=None):
    """Small dense-ish problem with a diagonal objective Hessian and linear rows."""
    m = len(c_lo)
    return NlpProblem(
        n=n, m=m,
        x_lo=np.full(n, -np.inf) if x_lo is None else np.asarray(x_lo, float),
        x_hi=np.full(n, np.inf) if x_hi is None else np.asarray(x_hi, float),
        c_lo=np.asarray(c_lo, float), c_hi=np.asarray(c_hi, float),
        x0=np.zeros(n) if x0 is None else np.asarray(x0, float),
        objective=f, gradient=g,
        constraints=cons or (lambda x: np.zeros(0)),
        jac_rows=np.asarray(jr, np.int64), jac_cols=np.asarray(jc, np.int64),
        jac_values=jac or (lambda x: np.zeros(0)),
        hess_rows=np.arange(n), hess_cols=np.arange(n),
        hess_values=lambda x, lam, sigma=1.0: sigma * np.asarray(hdiag, float),
    )


def test_interior_quadratic():
    p = nlp(1, lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), [2.0],
            x_lo=[0.0], x_hi=[10.0], x0=[1.0])
    res = solve(p, QUIET)
    assert res.status == CONVERGED
    assert res.x[0] == pytest.approx(3.0, abs=1e-6)


def test_active_bound_multiplier():
    p = nlp(1, lambda x: float(x[0]), lambda x: np.ones(1), [0.0], x_lo=[2.0], x0=[5.0])
    res = solve(p, QUIET)
    assert res.status == CONVERGED
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)
    assert res.iterate.z_lo[0] == pytest.approx(1.0, abs=1e-5)


def test_row_multiplier_sign():
    # min x s.t. x >= 2 as a constraint row
    p = nlp(1, lambda x: float(x[0]), lambda x: np.ones(1), [0.0],
            cons=lambda x: x.copy(), jac=lambda x: np.ones(1), jr=[0], jc=[0],
            c_lo=[2.0], c_hi=[np.inf], x0=[5.0])
    res = solve(p, QUIET)
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)
    assert abs(res.multipliers[0]) == pytest.approx(1.0, abs=1e-5)


def test_equality_constrained_qp():
    # min x1^2 + 2 x2^2 s.t. x1 + x2 = 3  ->  x = (2, 1)
    p = nlp(2, lambda x: float(x[0] ** 2 + 2 * x[1] ** 2), lambda x: np.array([2 * x[0], 4 * x[1]]),
            [2.0, 4.0], cons=lambda x: np.array([x[0] + x[1]]), jac=lambda x: np.ones(2),
            jr=[0, 0], jc=[0, 1], c_lo=[3.0], c_hi=[3.0])
    res = solve(p, QUIET)
    np.testing.assert_allclose(res.x, [2.0, 1.0], atol=1e-6)


def test_iteration_limit():
    p = nlp(1, lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), [2.0],
            x_lo=[0.0], x_hi=[10.0], x0=[1.0])
    res = solve(p, SolverOptions(verbose=False, max_iter=1))
    assert res.status == ITERATION_LIMIT
    assert res.iterations == 1


def test_kkt_diagonal_qp_block_form():
    p = nlp(2, lambda x: float(x[0] ** 2 + 2 * x[1] ** 2), lambda x: np.array([2 * x[0], 4 * x[1]]),
            [2.0, 4.0], cons=lambda x: np.array([x[0] + x[1]]), jac=lambda x: np.ones(2),
            jr=[0, 0], jc=[0, 1], c_lo=[3.0], c_hi=[3.0])
    prep = Prepared(p, QUIET)
    it = _initial_iterate(prep, QUIET)
    K, rhs = kkt_assemble(it, p, QUIET, prep)
    want = np.array([[2.0, 0, 0], [0, 4.0, 0], [1.0, 1.0, 0]])
    np.testing.assert_allclose(K.toarray(), want)
    assert rhs.shape == (3,)


def test_kkt_pattern_mismatch():
    p = nlp(2, lambda x: float(x @ x), lambda x: 2 * x, [2.0, 2.0],
            cons=lambda x: np.array([x[0] + x[1]]), jac=lambda x: np.ones(1),
            jr=[0, 0], jc=[0, 1], c_lo=[1.0], c_hi=[1.0])
    with pytest.raises(KktPatternError):
        Prepared(p, QUIET)


def test_five_bus_kkt_dimension_and_inertia():
    m = small_model()
    p = m.problem()
    prep = Prepared(p, QUIET)
    it = _initial_iterate(prep, QUIET)
    K, rhs = kkt_assemble(it, p, QUIET, prep)
    assert K.shape == (m.n + m.m, m.n + m.m)
    assert m.m == m.layout.n_eq + m.layout.n_ineq
    kkt = KktSystem(prep, QUIET)
    ev = _evaluate(prep, it.x)
    F = kkt.factorize(it, prep.hess(it.x, it.y), ev.jv, kkt.diagonal_terms(it))
    assert F.inertia.as_tuple() == (m.n, m.m, 0)


def test_fraction_to_boundary():
    v = np.array([1.0, 2.0])
    dv = np.array([-2.0, 1.0])
    a = fraction_to_boundary(v, dv, 0.995, lower=np.zeros(2))
    assert a == pytest.approx(0.995 * 0.5)
    assert v[0] + a * dv[0] >= (1 - 0.995) * v[0] - 1e-15
    assert fraction_to_boundary(v, np.abs(dv), 0.995, lower=np.zeros(2)) == 1.0


def _ls_setup(x0, direction):
    p = nlp(1, lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), [2.0],
            x_lo=[0.0], x_hi=[10.0], x0=x0)
    prep = Prepared(p, QUIET)
    it = _initial_iterate(prep, QUIET)
    it.mu = 1e-8
    ev = _evaluate(prep, it.x)
    dw = np.array([direction(it.x[0])])
    z = np.zeros(1)
    return prep, it, ev, dw, z


def test_full_newton_step_accepted():
    prep, it, ev, dw, z = _ls_setup([2.0], lambda x: 3.0 - x)
    ls = line_search(prep, it, ev, dw, np.zeros(0), z, z, QUIET, MeritState(), 2.0)
    assert ls.accepted and ls.alpha_primal == pytest.approx(1.0)
    assert ls.trials == 1


def test_step_capped_at_boundary():
    prep, it, ev, dw, z = _ls_setup([1.0], lambda x: -2.0 * x)
    ls = line_search(prep, it, ev, dw, np.zeros(0), z, z, QUIET, MeritState(), 0.0)
    assert ls.alpha_primal < 1.0
    x_new = it.x[0] + ls.alpha_primal * dw[0]
    assert x_new - prep.w_lo[0] >= (1 - 0.995) * (it.x[0] - prep.w_lo[0]) - 1e-12


def test_non_descent_backtracks():
    # moving away from the minimizer of (x - 3)^2
    prep, it, ev, dw, z = _ls_setup([4.0], lambda x: 1.0)
    ls = line_search(prep, it, ev, dw, np.zeros(0), z, z, QUIET, MeritState(), 0.0)
    assert ls.trials > 1


def _check_problem():
    p = nlp(1, lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), [2.0],
            x_lo=[0.0], x_hi=[10.0], x0=[3.0])
    return Prepared(p, QUIET)


def test_convergence_all_zero_residuals():
    prep = _check_problem()
    it = Iterate(np.array([3.0]), np.zeros(0), np.zeros(0), np.zeros(1), np.zeros(1), 1e-9, 0,
                 prep.eq)
    assert convergence_check(it, prep, QUIET) == CONVERGED


def test_convergence_needs_small_mu():
    prep = _check_problem()
    it = Iterate(np.array([3.0]), np.zeros(0), np.zeros(0), np.zeros(1), np.zeros(1), 1.0, 0,
                 prep.eq)
    assert convergence_check(it, prep, QUIET) is None


def test_log_header(capsys):
    import io
    buf = io.StringIO()
    p = nlp(1, lambda x: float((x[0] - 3) ** 2), lambda x: 2 * (x - 3), [2.0],
            x_lo=[0.0], x_hi=[10.0], x0=[1.0])
    solve(p, SolverOptions(log=buf))
    first = buf.getvalue().splitlines()[0]
    assert first == "iter,objective,inf_pr,inf_du,mu,alpha_pr,alpha_du,regularization"


def test_small_scopf_converges():
    m = small_model()
    res = solve(m.problem(), QUIET)
    assert res.status == CONVERGED
    assert res.iterations < 200
    assert res.residuals["constraint_violation"] <= 1e-6
