"""Primal-dual interior-point method for

    min f(x)  s.t.  c_lo <= c(x) <= c_hi,  x_lo <= x <= x_hi.

Inequality rows get slacks ``d(x) - s = 0`` with ``s`` carrying the row
bounds, so the barrier subproblem only has equality constraints and simple
bounds on ``w = (x, s)``. Newton steps come from the reduced augmented
system

    [ W + Sx + dx*I      J^T           ] [dx]   = -[ grad phi + J^T y       ]
    [ J                 -Ss^-1 - dc*I  ] [dy]      [ c + Ss^-1 (ds rhs)     ]

with the slack block eliminated. Fixed variables (``x_lo == x_hi``) stay in
the system as identity rows, so its dimension is always ``n + m``.
Globalization is a backtracking line search on an l1 exact-penalty merit
function with second-order corrections. Inertia is corrected by geometric
primal regularization; zero pivots trigger dual regularization.
"""
from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
import scipy.sparse as sp

from ..nlp import NlpProblem
from .ldl import FactorizationError, NumericLDL, SymbolicLDL

CONVERGED = "converged"
ITERATION_LIMIT = "iteration-limit"
NUMERIC_FAILURE = "numeric-failure"
INFEASIBLE = "infeasible-detected"
STATUSES = (CONVERGED, ITERATION_LIMIT, NUMERIC_FAILURE, INFEASIBLE)


class NumericFailure(RuntimeError):
    pass


class KktPatternError(ValueError):
    pass


@dataclass
class SolverOptions:
    tol: float = 1e-5
    max_iter: int = 500
    mu_strategy: str = "monotone"  # or "adaptive"
    mu_init: float = 0.1
    mu_factor: float = 0.2
    mu_power: float = 1.5
    tau: float = 0.995
    reg_floor: float = 1e-8  # first primal regularization trial
    reg_max: float = 1e20
    dual_reg: float = 1e-8
    constr_viol_tol: float = 1e-6
    merit_rho: float = 0.1
    merit_margin: float = 1.5  # penalty is set to this multiple of the required value
    armijo: float = 1e-4
    alpha_min: float = 1e-12
    max_soc: int = 4
    bound_relax: float = 1e-8
    bound_push: float = 1e-2
    kappa_sigma: float = 1e10
    scaling_gradient: float = 100.0
    refine_steps: int = 8
    mult_init_max: float = 1e3
    verbose: bool = True
    log: Optional[TextIO] = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if self.mu_strategy not in ("monotone", "adaptive"):
            raise ValueError(f"unknown mu strategy {self.mu_strategy!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be >= 0")


@dataclass
class Iterate:
    """Primal-dual point in the scaled problem.

    ``y`` holds one multiplier per constraint row (row order of the problem);
    ``z_lo``/``z_hi`` are bound multipliers on ``w = (x, s)`` and are zero
    where the bound is absent.
    """

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    z_lo: np.ndarray
    z_hi: np.ndarray
    mu: float
    k: int = 0
    eq_rows: Optional[np.ndarray] = None

    @property
    def y_eq(self):
        return self.y[self.eq_rows] if self.eq_rows is not None else self.y

    @property
    def y_ineq(self):
        return self.y[~self.eq_rows] if self.eq_rows is not None else self.y[:0]

    def copy(self) -> "Iterate":
        return Iterate(
            self.x.copy(), self.s.copy(), self.y.copy(), self.z_lo.copy(), self.z_hi.copy(),
            self.mu, self.k, self.eq_rows,
        )


@dataclass
class SolverResult:
    status: str
    iterate: Iterate
    objective: float
    x: np.ndarray
    multipliers: np.ndarray  # unscaled, one per constraint row
    schedule: object
    iterations: int
    wall_time: float
    residuals: dict
    history: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class Prepared:
    """Scaled problem with slack structure and a fixed KKT pattern."""

    def __init__(self, p: NlpProblem, opts: SolverOptions):
        self.p, self.opts = p, opts
        n, m = p.n, p.m
        self.n, self.m = n, m
        x_lo = np.asarray(p.x_lo, float)
        x_hi = np.asarray(p.x_hi, float)
        if np.any(x_lo > x_hi):
            raise ValueError("x_lo > x_hi")
        if np.any(p.c_lo > p.c_hi):
            raise ValueError("c_lo > c_hi")
        self.fixed = x_lo == x_hi
        self.free = ~self.fixed
        self.eq = np.asarray(p.c_lo == p.c_hi)
        self.ineq = ~self.eq
        self.ineq_rows = np.flatnonzero(self.ineq)
        self.m_i = len(self.ineq_rows)
        if np.any(~np.isfinite(p.c_lo[self.ineq]) & ~np.isfinite(p.c_hi[self.ineq])):
            raise ValueError("inequality rows need at least one finite bound")

        x0 = np.where(self.fixed, x_lo, np.asarray(p.x0, float))
        jv0 = self._jac_raw(x0)
        g0 = p.gradient(x0)
        gmax = np.abs(g0[self.free]).max(initial=0.0)
        big = opts.scaling_gradient
        self.obj_scale = min(1.0, big / gmax) if gmax > 0 else 1.0
        jmask = self.free[p.jac_cols]
        rowmax = np.zeros(m)
        np.maximum.at(rowmax, p.jac_rows[jmask], np.abs(jv0[jmask]))
        self.row_scale = np.where(rowmax > big, big / np.maximum(rowmax, 1e-300), 1.0)

        # bounds on w = (x, s), relaxed slightly
        s_lo = (p.c_lo * self.row_scale)[self.ineq]
        s_hi = (p.c_hi * self.row_scale)[self.ineq]
        w_lo = np.concatenate([np.where(self.free, x_lo, -np.inf), s_lo])
        w_hi = np.concatenate([np.where(self.free, x_hi, np.inf), s_hi])
        self.has_lo = np.isfinite(w_lo)
        self.has_hi = np.isfinite(w_hi)
        # relaxation stays well inside the unscaled violation tolerance
        unit = np.concatenate([np.ones(n), self.row_scale[self.ineq]])
        raw_lo = np.where(self.has_lo, w_lo / unit, 0.0)
        raw_hi = np.where(self.has_hi, w_hi / unit, 0.0)
        cap = 0.1 * opts.constr_viol_tol
        rl = unit * np.minimum(opts.bound_relax * np.maximum(1.0, np.abs(raw_lo)), cap)
        ru = unit * np.minimum(opts.bound_relax * np.maximum(1.0, np.abs(raw_hi)), cap)
        self.w_lo = np.where(self.has_lo, w_lo - rl, -np.inf)
        self.w_hi = np.where(self.has_hi, w_hi + ru, np.inf)
        self.c_target = np.where(self.eq, p.c_lo * self.row_scale, 0.0)
        self.x_fixed = x_lo[self.fixed]

        # KKT pattern: Hessian lower triangle, Jacobian below, full diagonal
        hmask = self.free[p.hess_rows] & self.free[p.hess_cols]
        self.jmask, self.hmask = jmask, hmask
        rows = np.concatenate([p.hess_rows[hmask], n + p.jac_rows[jmask]])
        cols = np.concatenate([p.hess_cols[hmask], p.jac_cols[jmask]])
        self.dim = n + m
        self.sym = SymbolicLDL(rows, cols, self.dim)
        self.jac_scale = self.row_scale[p.jac_rows[jmask]]
        self.J_rows = p.jac_rows[jmask]
        self.J_cols = p.jac_cols[jmask]
        self._nnz_j = len(p.jac_rows)
        self._nnz_h = len(p.hess_rows)

    # ---- evaluations (scaled)
    def _jac_raw(self, x):
        v = np.asarray(self.p.jac_values(x), float)
        if v.shape != (len(self.p.jac_rows),):
            raise KktPatternError(
                f"Jacobian callback returned {v.shape[0]} values for a pattern of "
                f"{len(self.p.jac_rows)} entries"
            )
        return v

    def f(self, x):
        return self.obj_scale * float(self.p.objective(x))

    def grad(self, x):
        g = self.obj_scale * np.asarray(self.p.gradient(x), float)
        g[self.fixed] = 0.0
        return g

    def cons(self, x):
        return self.row_scale * np.asarray(self.p.constraints(x), float)

    def jac(self, x):
        """Scaled Jacobian values on the restricted pattern."""
        return self._jac_raw(x)[self.jmask] * self.jac_scale

    def hess(self, x, y):
        v = np.asarray(self.p.hess_values(x, y * self.row_scale, self.obj_scale), float)
        if v.shape != (self._nnz_h,):
            raise KktPatternError(
                f"Hessian callback returned {v.shape[0]} values for a pattern of {self._nnz_h} entries"
            )
        return v[self.hmask]

    def Jt_y(self, jv, y):
        return np.bincount(self.J_cols, jv * y[self.J_rows], self.n)

    def J_dx(self, jv, dx):
        return np.bincount(self.J_rows, jv * dx[self.J_cols], self.m)

    def residual_c(self, craw, s):
        """Scaled constraint residual: equality rows vs target, inequality rows vs slack."""
        r = craw - self.c_target
        r[self.ineq_rows] = craw[self.ineq_rows] - s
        return r

    def w_of(self, it: Iterate):
        return np.concatenate([it.x, it.s])

    def split(self, w):
        return w[: self.n], w[self.n:]

    def unscaled_violation(self, x):
        c = np.asarray(self.p.constraints(x), float)
        v = np.maximum(self.p.c_lo - c, 0.0)
        v = np.maximum(v, c - self.p.c_hi)
        xv = np.maximum(self.p.x_lo - x, 0.0)
        xv = np.maximum(xv, x - self.p.x_hi)
        return max(float(v.max(initial=0.0)), float(xv.max(initial=0.0)))


@dataclass
class _Eval:
    f: float
    g: np.ndarray
    craw: np.ndarray
    jv: np.ndarray


class KktSystem:
    """Assembles and factors the augmented system with inertia correction."""

    def __init__(self, prep: Prepared, opts: SolverOptions):
        self.prep, self.opts = prep, opts
        self.delta_x_last = 0.0
        self.delta_x = 0.0
        self.delta_c = 0.0
        self.factor: Optional[NumericLDL] = None

    def diagonal_terms(self, it: Iterate):
        prep = self.prep
        w = prep.w_of(it)
        sig = np.zeros_like(w)
        lo, hi = prep.has_lo, prep.has_hi
        sig[lo] += it.z_lo[lo] / (w[lo] - prep.w_lo[lo])
        sig[hi] += it.z_hi[hi] / (prep.w_hi[hi] - w[hi])
        return sig

    def values(self, hv, jv, sig, dx, dc, dc_eq=None):
        prep = self.prep
        n = prep.n
        sig_x, sig_s = sig[:n], sig[n:]
        diag = np.zeros(prep.dim)
        diag[:n] = np.where(prep.free, sig_x + dx, 1.0)
        ydiag = np.where(prep.eq, -(dc if dc_eq is None else dc_eq), 0.0)
        ydiag[prep.ineq_rows] = -1.0 / sig_s - dc
        diag[n:] = ydiag
        vals = np.concatenate([hv, jv])
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(diag))):
            raise NumericFailure("non-finite entries in the KKT system")
        return prep.sym.values(vals, diag)

    def factorize(self, it: Iterate, hv, jv, sig):
        """Factor with the smallest regularization that gives inertia (n, m, 0)."""
        prep, o = self.prep, self.opts
        want = (prep.n, prep.m)
        self.delta_c = 0.0
        dx = 0.0
        F = prep.sym.factor(self.values(hv, jv, sig, dx, 0.0))
        if F.inertia.zero > 0:
            self.delta_c = o.dual_reg * it.mu ** 0.25
            F = prep.sym.factor(self.values(hv, jv, sig, dx, self.delta_c))
        if (F.inertia.positive, F.inertia.negative) == want and F.inertia.zero == 0:
            return self._done(F, hv, jv, sig, dx)
        dx = o.reg_floor if self.delta_x_last == 0 else max(o.reg_floor, self.delta_x_last / 3.0)
        first = self.delta_x_last == 0
        while dx <= o.reg_max:
            F = prep.sym.factor(self.values(hv, jv, sig, dx, self.delta_c))
            if F.inertia.zero > 0 and self.delta_c == 0.0:
                self.delta_c = o.dual_reg * it.mu ** 0.25
                continue
            if (F.inertia.positive, F.inertia.negative) == want and F.inertia.zero == 0:
                self.delta_x_last = dx
                return self._done(F, hv, jv, sig, dx)
            dx *= 100.0 if first else 8.0
        raise NumericFailure("inertia correction exceeded the regularization cap")

    def _done(self, F, hv, jv, sig, dx):
        self.delta_x = dx
        self.factor = F
        # refinement runs against the system without dual regularization
        Ax = self.values(hv, jv, sig, dx, self.delta_c, dc_eq=0.0)
        sym = self.prep.sym
        U = sp.csc_matrix((Ax, sym.Ai, sym.Ap), shape=(sym.n, sym.n))
        d = U.diagonal()
        self._U, self._d = U, d
        return F

    def matvec(self, v):
        sym = self.prep.sym
        vp = v[sym.perm]
        yp = self._U @ vp + self._U.T @ vp - self._d * vp
        out = np.empty_like(yp)
        out[sym.perm] = yp
        return out

    def solve(self, rhs):
        x = self.factor.solve(rhs)
        scale = 1.0 + np.abs(rhs).max(initial=0.0)
        r = rhs - self.matvec(x)
        best = np.abs(r).max(initial=0.0)
        for _ in range(self.opts.refine_steps):
            if best <= 1e-12 * scale:
                break
            x_new = x + self.factor.solve(r)
            r_new = rhs - self.matvec(x_new)
            err = np.abs(r_new).max(initial=0.0)
            if err >= 0.9 * best:
                if err < best:
                    x, r, best = x_new, r_new, err
                break
            x, r, best = x_new, r_new, err
        if not np.all(np.isfinite(x)):
            raise NumericFailure("non-finite Newton step")
        return x


def kkt_assemble(it: Iterate, p: NlpProblem, opts: Optional[SolverOptions] = None,
                 prep: Optional[Prepared] = None):
    """Augmented system at ``it`` as ``(lower-triangular matrix, rhs)``.

    The rhs is the Newton right-hand side of the barrier subproblem at
    ``it.mu``; the matrix carries no regularization.
    """
    opts = opts or SolverOptions(verbose=False)
    prep = prep or Prepared(p, opts)
    ev = _evaluate(prep, it.x)
    hv = prep.hess(it.x, it.y)
    kkt = KktSystem(prep, opts)
    sig = kkt.diagonal_terms(it)
    Ax = kkt.values(hv, ev.jv, sig, 0.0, 0.0)
    sym = prep.sym
    U = sp.csc_matrix((Ax, sym.Ai, sym.Ap), shape=(sym.n, sym.n)).tocoo()
    r, c = sym.perm[U.row], sym.perm[U.col]
    lower = sp.coo_matrix((U.data, (np.maximum(r, c), np.minimum(r, c))), shape=U.shape).tocsr()
    rhs = _rhs(prep, it, ev, sig)
    return lower, rhs


def _evaluate(prep: Prepared, x) -> _Eval:
    f = prep.f(x)
    g = prep.grad(x)
    craw = prep.cons(x)
    jv = prep.jac(x)
    if not (np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(craw))):
        raise NumericFailure("non-finite function values")
    return _Eval(f, g, craw, jv)


def _barrier_grad(prep: Prepared, it: Iterate, g):
    """Gradient of the barrier objective with respect to w."""
    w = prep.w_of(it)
    gw = np.concatenate([g, np.zeros(prep.m_i)])
    lo, hi = prep.has_lo, prep.has_hi
    gw[lo] -= it.mu / (w[lo] - prep.w_lo[lo])
    gw[hi] += it.mu / (prep.w_hi[hi] - w[hi])
    return gw


def _rhs(prep: Prepared, it: Iterate, ev: _Eval, sig, c_res=None):
    n = prep.n
    gw = _barrier_grad(prep, it, ev.g)
    rx = gw[:n] + prep.Jt_y(ev.jv, it.y)
    rx[prep.fixed] = 0.0
    rs = gw[n:] - it.y[prep.ineq_rows]
    c = prep.residual_c(ev.craw, it.s) if c_res is None else c_res
    bot = -c.copy()
    bot[prep.ineq_rows] -= rs / sig[n:]
    return np.concatenate([-rx, bot])


def _recover_step(prep: Prepared, it: Iterate, sol, sig):
    """Full primal-dual direction from the reduced solution."""
    n = prep.n
    dx = sol[:n]
    dy = sol[n:]
    gw_s = -it.y[prep.ineq_rows]
    w = prep.w_of(it)
    lo, hi = prep.has_lo, prep.has_hi
    # barrier slack residual r_s
    rs = gw_s.copy()
    ws = w[n:]
    los, his = lo[n:], hi[n:]
    rs[los] -= it.mu / (ws[los] - prep.w_lo[n:][los])
    rs[his] += it.mu / (prep.w_hi[n:][his] - ws[his])
    ds = (dy[prep.ineq_rows] - rs) / sig[n:]
    dw = np.concatenate([dx, ds])
    dzl = np.zeros_like(w)
    dzu = np.zeros_like(w)
    gl = w[lo] - prep.w_lo[lo]
    gu = prep.w_hi[hi] - w[hi]
    dzl[lo] = it.mu / gl - it.z_lo[lo] - it.z_lo[lo] / gl * dw[lo]
    dzu[hi] = it.mu / gu - it.z_hi[hi] + it.z_hi[hi] / gu * dw[hi]
    return dw, dy, dzl, dzu


def fraction_to_boundary(v, dv, tau, lower=None, upper=None) -> float:
    """Largest alpha in (0, 1] keeping ``v + alpha dv`` at least a fraction
    ``1 - tau`` of the current distance away from the given bounds."""
    alpha = 1.0
    if lower is not None:
        gap = v - lower
        neg = dv < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-tau * gap[neg] / dv[neg])))
    if upper is not None:
        gap = upper - v
        pos = dv > 0
        if np.any(pos):
            alpha = min(alpha, float(np.min(tau * gap[pos] / dv[pos])))
    return alpha


def _max_steps(prep: Prepared, it: Iterate, dw, dzl, dzu, tau):
    w = prep.w_of(it)
    lo, hi = prep.has_lo, prep.has_hi
    a_p = min(
        fraction_to_boundary(w[lo], dw[lo], tau, lower=prep.w_lo[lo]),
        fraction_to_boundary(w[hi], dw[hi], tau, upper=prep.w_hi[hi]),
    )
    a_d = min(
        fraction_to_boundary(it.z_lo[lo], dzl[lo], tau, lower=0.0),
        fraction_to_boundary(it.z_hi[hi], dzu[hi], tau, lower=0.0),
    )
    return a_p, a_d


def _barrier_value(prep: Prepared, w, f, mu):
    lo, hi = prep.has_lo, prep.has_hi
    gl = w[lo] - prep.w_lo[lo]
    gu = prep.w_hi[hi] - w[hi]
    if np.any(gl <= 0) or np.any(gu <= 0):
        return np.inf
    return f - mu * (np.log(gl).sum() + np.log(gu).sum())


@dataclass
class LineSearchResult:
    accepted: bool
    alpha_primal: float
    alpha_dual: float
    trials: int
    soc_used: bool
    w: Optional[np.ndarray] = None
    eval: Optional[_Eval] = None


class MeritState:
    def __init__(self):
        self.nu = 0.0


def line_search(prep: Prepared, it: Iterate, ev: _Eval, dw, dy, dzl, dzu, opts: SolverOptions,
                merit: MeritState, curvature: float, kkt: Optional[KktSystem] = None,
                sig=None) -> LineSearchResult:
    """Backtracking on ``phi_mu + nu * ||c||_1`` with Armijo acceptance.

    The primal step is capped by the fraction-to-boundary rule on ``w``;
    the dual step on the bound multipliers is capped independently.
    """
    tau = max(opts.tau, 1.0 - it.mu)
    a_max, a_dual = _max_steps(prep, it, dw, dzl, dzu, tau)
    w0 = prep.w_of(it)
    c0 = prep.residual_c(ev.craw, it.s)
    theta0 = float(np.abs(c0).sum())
    phi0 = _barrier_value(prep, w0, ev.f, it.mu)
    gphi = _barrier_grad(prep, it, ev.g)
    slope = float(gphi @ dw)
    if theta0 > 0:
        need = (slope + 0.5 * max(curvature, 0.0)) / ((1.0 - opts.merit_rho) * theta0)
        if merit.nu < need:
            merit.nu = opts.merit_margin * need
    D = slope - merit.nu * theta0
    m0 = phi0 + merit.nu * theta0

    def merit_at(w):
        x, s = prep.split(w)
        x = x.copy()
        x[prep.fixed] = prep.x_fixed
        try:
            with np.errstate(all="ignore"):
                e = _evaluate(prep, x)
        except NumericFailure:
            return np.inf, None, np.inf
        th = float(np.abs(prep.residual_c(e.craw, s)).sum())
        return _barrier_value(prep, w, e.f, it.mu) + merit.nu * th, e, th

    alpha = a_max
    trials = 0
    first = True
    while alpha >= opts.alpha_min:
        trials += 1
        w = w0 + alpha * dw
        val, e, th = merit_at(w)
        if np.isfinite(val) and val <= m0 + opts.armijo * alpha * D:
            return LineSearchResult(True, alpha, a_dual, trials, False, w, e)
        if first and kkt is not None and e is not None and th >= theta0 and opts.max_soc > 0:
            res = _second_order_correction(prep, it, ev, kkt, sig, w0, alpha, dw, c0, e, tau,
                                           m0, D, merit_at, opts)
            if res is not None:
                w_soc, e_soc, a_soc = res
                return LineSearchResult(True, a_soc, a_dual, trials, True, w_soc, e_soc)
        first = False
        alpha *= 0.5
    return LineSearchResult(False, alpha, a_dual, trials, False)


def _second_order_correction(prep, it, ev, kkt, sig, w0, alpha, dw, c0, e_trial, tau,
                             m0, D, merit_at, opts):
    c_soc = alpha * c0
    e = e_trial
    n = prep.n
    for _ in range(opts.max_soc):
        _, s_trial = prep.split(w0 + alpha * dw)
        c_soc = c_soc + prep.residual_c(e.craw, s_trial)
        sol = kkt.solve(_rhs(prep, it, ev, sig, c_res=c_soc))
        dw_c, _, _, _ = _recover_step(prep, it, sol, sig)
        lo, hi = prep.has_lo, prep.has_hi
        a = min(
            fraction_to_boundary(w0[lo], dw_c[lo], tau, lower=prep.w_lo[lo]),
            fraction_to_boundary(w0[hi], dw_c[hi], tau, upper=prep.w_hi[hi]),
        )
        w = w0 + a * dw_c
        val, e, _ = merit_at(w)
        if e is None:
            return None
        if np.isfinite(val) and val <= m0 + opts.armijo * alpha * D:
            return w, e, a
        alpha = a
        dw = dw_c
    return None


def _error_terms(prep: Prepared, it: Iterate, ev: _Eval, mu: float, s_max=100.0):
    n = prep.n
    rx = ev.g + prep.Jt_y(ev.jv, it.y) - it.z_lo[:n] + it.z_hi[:n]
    rx[prep.fixed] = 0.0
    rs = -it.y[prep.ineq_rows] - it.z_lo[n:] + it.z_hi[n:]
    dual = max(np.abs(rx).max(initial=0.0), np.abs(rs).max(initial=0.0))
    primal = float(np.abs(prep.residual_c(ev.craw, it.s)).max(initial=0.0))
    w = prep.w_of(it)
    lo, hi = prep.has_lo, prep.has_hi
    cl = it.z_lo[lo] * (w[lo] - prep.w_lo[lo]) - mu
    cu = it.z_hi[hi] * (prep.w_hi[hi] - w[hi]) - mu
    compl = max(np.abs(cl).max(initial=0.0), np.abs(cu).max(initial=0.0))
    nz = int(lo.sum() + hi.sum())
    zsum = float(it.z_lo.sum() + it.z_hi.sum())
    s_d = max(s_max, (np.abs(it.y).sum() + zsum) / max(prep.m + nz, 1)) / s_max
    s_c = max(s_max, zsum / max(nz, 1)) / s_max
    return dual / s_d, primal, compl / s_c, float(dual)


def convergence_check(it: Iterate, prep: Prepared, opts: SolverOptions, ev: Optional[_Eval] = None):
    """``converged`` iff scaled stationarity, feasibility and complementarity
    are all within ``tol``, the unscaled constraint violation is within
    ``constr_viol_tol`` and ``mu`` has been driven below ``tol/10``."""
    if ev is None:
        ev = _evaluate(prep, it.x)
    dual, primal, compl, _ = _error_terms(prep, it, ev, 0.0)
    ok = (
        max(dual, primal, compl) <= opts.tol
        and prep.unscaled_violation(it.x) <= opts.constr_viol_tol
        and it.mu <= opts.tol / 10.0 * (1 + 1e-12)
    )
    return CONVERGED if ok else None


def _initial_iterate(prep: Prepared, opts: SolverOptions, x0=None) -> Iterate:
    p = prep.p
    x = np.asarray(p.x0 if x0 is None else x0, float).copy()
    x[prep.fixed] = prep.x_fixed
    craw = prep.cons(x)
    w = np.concatenate([x, craw[prep.ineq_rows]])
    k1 = k2 = opts.bound_push
    lo, hi = prep.has_lo, prep.has_hi
    wl, wu = prep.w_lo, prep.w_hi
    both = lo & hi
    pl = np.where(lo, k1 * np.maximum(1.0, np.abs(np.where(lo, wl, 0.0))), 0.0)
    pu = np.where(hi, k1 * np.maximum(1.0, np.abs(np.where(hi, wu, 0.0))), 0.0)
    span = np.where(both, wu - wl, np.inf)
    pl = np.where(both, np.minimum(pl, k2 * span), pl)
    pu = np.where(both, np.minimum(pu, k2 * span), pu)
    w = np.where(lo, np.maximum(w, wl + pl), w)
    w = np.where(hi, np.minimum(w, wu - pu), w)
    x, s = w[: prep.n], w[prep.n:]
    x[prep.fixed] = prep.x_fixed
    z_lo = np.where(lo, 1.0, 0.0)
    z_hi = np.where(hi, 1.0, 0.0)
    it = Iterate(x, s, np.zeros(prep.m), z_lo, z_hi, opts.mu_init, 0, prep.eq)
    it.y = _least_squares_multipliers(prep, it, opts)
    return it


def _least_squares_multipliers(prep: Prepared, it: Iterate, opts: SolverOptions):
    """y minimizing the dual residual with the initial bound multipliers."""
    ev = _evaluate(prep, it.x)
    n = prep.n
    diag = np.concatenate([np.where(prep.free, 1.0, 1.0), np.zeros(prep.m)])
    # slack columns enter as -I on inequality rows: their identity block
    # folds into a -1 diagonal for those rows
    diag[n + prep.ineq_rows] = -1.0
    hv = np.zeros(int(prep.hmask.sum()))
    Ax = prep.sym.values(np.concatenate([hv, ev.jv]), diag)
    try:
        F = prep.sym.factor(Ax)
        if F.inertia.zero:
            Ax = prep.sym.values(np.concatenate([hv, ev.jv]), diag - np.r_[np.zeros(n), np.full(prep.m, 1e-8)])
            F = prep.sym.factor(Ax)
    except FactorizationError:
        return np.zeros(prep.m)
    rx = ev.g - it.z_lo[:n] + it.z_hi[:n]
    rx[prep.fixed] = 0.0
    rs = -(-it.z_lo[n:] + it.z_hi[n:])
    rhs = np.concatenate([-rx, np.zeros(prep.m)])
    rhs[n + prep.ineq_rows] = rs
    sol = F.solve(rhs)
    y = sol[n:]
    if not np.all(np.isfinite(y)) or np.abs(y).max(initial=0.0) > opts.mult_init_max:
        return np.zeros(prep.m)
    return y


def _mu_next(mu, opts):
    return max(opts.tol / 10.0, min(opts.mu_factor * mu, mu ** opts.mu_power))


class _Logger:
    def __init__(self, opts):
        self.out = opts.log if opts.log is not None else sys.stderr
        self.on = opts.verbose

    def header(self):
        if self.on:
            print("iter,objective,inf_pr,inf_du,mu,alpha_pr,alpha_du,regularization", file=self.out)

    def row(self, k, obj, inf_pr, inf_du, mu, a_p, a_d, reg):
        if self.on:
            print(f"{k},{obj:.10e},{inf_pr:.3e},{inf_du:.3e},{mu:.3e},{a_p:.3e},{a_d:.3e},{reg:.1e}",
                  file=self.out)

    def note(self, msg):
        if self.on:
            print(f"# {msg}", file=self.out)


def solve(p: NlpProblem, opts: Optional[SolverOptions] = None) -> SolverResult:
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    prep = Prepared(p, opts)
    log = _Logger(opts)
    it = _initial_iterate(prep, opts)
    kkt = KktSystem(prep, opts)
    merit = MeritState()
    history = []
    status = None
    a_p = a_d = 0.0
    fails_in_row = 0
    log.header()

    ev = _evaluate(prep, it.x)
    while True:
        dual, primal, compl, _ = _error_terms(prep, it, ev, 0.0)
        obj = ev.f / prep.obj_scale
        reg = kkt.delta_x
        log.row(it.k, obj, prep.unscaled_violation(it.x), dual, it.mu, a_p, a_d, reg)
        history.append((it.k, obj, primal, dual, compl, it.mu, a_p, a_d, reg))
        if convergence_check(it, prep, opts, ev) == CONVERGED:
            status = CONVERGED
            break
        if it.k >= opts.max_iter:
            status = ITERATION_LIMIT
            break

        # barrier parameter update
        if opts.mu_strategy == "monotone":
            while True:
                d_mu, p_mu, c_mu, _ = _error_terms(prep, it, ev, it.mu)
                if max(d_mu, p_mu, c_mu) > 10.0 * it.mu or it.mu <= opts.tol / 10.0:
                    break
                it.mu = _mu_next(it.mu, opts)
                merit.nu = 0.0
        else:
            it.mu = _adaptive_mu(prep, it, opts)

        try:
            hv = prep.hess(it.x, it.y)
            sig = kkt.diagonal_terms(it)
            kkt.factorize(it, hv, ev.jv, sig)
            sol = kkt.solve(_rhs(prep, it, ev, sig))
        except NumericFailure as exc:
            log.note(str(exc))
            status = NUMERIC_FAILURE
            break
        dw, dy, dzl, dzu = _recover_step(prep, it, sol, sig)
        dx = dw[: prep.n]
        ds = dw[prep.n:]
        W_dx = _sym_lower_matvec(prep, hv, dx) + (sig[: prep.n] + kkt.delta_x) * dx
        curvature = float(dx @ W_dx + ds @ (sig[prep.n:] * ds))
        ls = line_search(prep, it, ev, dw, dy, dzl, dzu, opts, merit, curvature, kkt, sig)
        if not ls.accepted:
            fails_in_row += 1
            if fails_in_row >= 2:
                log.note("line search failed twice in a row")
                status = NUMERIC_FAILURE
                break
            # raise mu one notch and re-center the bound multipliers
            it.mu = min(it.mu / opts.mu_factor, max(opts.mu_init, it.mu))
            _recenter(prep, it)
            kkt.delta_x_last = max(kkt.delta_x_last * 8.0, opts.reg_floor * 1e4)
            merit.nu = 0.0
            a_p = a_d = 0.0
            it.k += 1
            continue
        fails_in_row = 0
        a_p, a_d = ls.alpha_primal, ls.alpha_dual
        x_new, s_new = prep.split(ls.w)
        x_new = x_new.copy()
        x_new[prep.fixed] = prep.x_fixed
        it.x, it.s = x_new, s_new.copy()
        it.y = it.y + a_p * dy
        it.z_lo = it.z_lo + a_d * dzl
        it.z_hi = it.z_hi + a_d * dzu
        _safeguard(prep, it, opts)
        ev = ls.eval
        it.k += 1

    # relaxed bounds allow tiny excursions; report the point on the true box
    x = np.clip(it.x, p.x_lo, p.x_hi)
    y_unscaled = it.y * prep.row_scale / prep.obj_scale
    dual, primal, compl, _ = _error_terms(prep, it, ev, 0.0)
    residuals = {
        "stationarity": dual,
        "feasibility": primal,
        "complementarity": compl,
        "constraint_violation": prep.unscaled_violation(x),
        "mu": it.mu,
    }
    schedule = p.schedule(x) if p.schedule is not None else None
    return SolverResult(
        status=status,
        iterate=it,
        objective=float(p.objective(x)),
        x=x,
        multipliers=y_unscaled,
        schedule=schedule,
        iterations=it.k,
        wall_time=time.perf_counter() - t0,
        residuals=residuals,
        history=history,
    )


def _sym_lower_matvec(prep: Prepared, hv, v):
    r = prep.p.hess_rows[prep.hmask]
    c = prep.p.hess_cols[prep.hmask]
    out = np.bincount(r, hv * v[c], prep.n)
    off = r != c
    out += np.bincount(c[off], hv[off] * v[r[off]], prep.n)
    return out


def _recenter(prep: Prepared, it: Iterate):
    w = prep.w_of(it)
    lo, hi = prep.has_lo, prep.has_hi
    it.z_lo[lo] = it.mu / (w[lo] - prep.w_lo[lo])
    it.z_hi[hi] = it.mu / (prep.w_hi[hi] - w[hi])


def _safeguard(prep: Prepared, it: Iterate, opts: SolverOptions):
    """Keep bound multipliers within a factor kappa_sigma of mu / gap."""
    w = prep.w_of(it)
    k = opts.kappa_sigma
    lo, hi = prep.has_lo, prep.has_hi
    gl = w[lo] - prep.w_lo[lo]
    gu = prep.w_hi[hi] - w[hi]
    it.z_lo[lo] = np.clip(it.z_lo[lo], it.mu / (k * gl), k * it.mu / gl)
    it.z_hi[hi] = np.clip(it.z_hi[hi], it.mu / (k * gu), k * it.mu / gu)


def _adaptive_mu(prep: Prepared, it: Iterate, opts: SolverOptions) -> float:
    """Complementarity-based update; never increases mu."""
    w = prep.w_of(it)
    lo, hi = prep.has_lo, prep.has_hi
    prods = np.concatenate([
        it.z_lo[lo] * (w[lo] - prep.w_lo[lo]),
        it.z_hi[hi] * (prep.w_hi[hi] - w[hi]),
    ])
    if len(prods) == 0:
        return max(opts.tol / 10.0, opts.mu_factor * it.mu)
    avg = prods.mean()
    xi = prods.min() / avg if avg > 0 else 1.0
    sigma = 0.1 * min(0.05 * (1.0 - xi) / max(xi, 1e-16), 2.0) ** 3
    return max(opts.tol / 10.0, min(it.mu, sigma * avg))
