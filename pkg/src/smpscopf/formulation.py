"""Stochastic multi-period AC SCOPF as a quadratically constrained NLP.

Decision variables live in per unit (power base ``net.base_mva``, energy in
p.u.-hours) and are laid out k-major, then scenario, then period, then
family, then element. Every residual is at most quadratic in the variables,
which gives exact first and second derivatives on fixed patterns.

Row families (``eq`` tags):

    "2"  active power balance          "3"  reactive power balance
    "12" storage energy transition     "14" storage cycle closure
    "18" flexible-load energy balance  "ref" angle reference (f = 0)
    "rd" redispatch split (redispatch mode only)
    "8"  branch current limit          "9"  voltage magnitude limits
    "10" ramping between periods       "11" preventive/corrective coupling
    "15" storage charge/discharge exclusivity
    "21" flexible-load inc/dec exclusivity

Equality rows come first, inequality rows after.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import AdmittanceView, NormalizedNetwork, admittance_view
from .nlp import NlpProblem, RowBuilder, qcqp_problem
from .scenarios import LoadProfileSet, ScenarioSet

FAMILIES = ("P", "Q", "e", "f", "ch", "dis", "soc", "inc", "dec", "rc", "lc")
REDISPATCH_FAMILIES = ("up", "dn")

EQUALITY_ROWS = ("2", "3", "12", "14", "18", "ref", "rd")
INEQUALITY_ROWS = ("8", "9", "10", "11", "15", "21")

PRODUCTION = "production"
REDISPATCH = "redispatch"
OBJECTIVE_MODES = (PRODUCTION, REDISPATCH)
_MODE_ALIASES = {"production-quadratic": PRODUCTION, "redispatch-linear": REDISPATCH}


def objective_mode(name: str) -> str:
    mode = _MODE_ALIASES.get(name, name)
    if mode not in OBJECTIVE_MODES:
        raise ValueError(f"unknown objective mode {name!r}")
    return mode


class VariableIndex:
    """Bijection between named variables ``(family, element, s, t, k)`` and
    positions in the flat vector."""

    def __init__(self, n_bus, n_gen, n_ess, n_fl, n_res, S, T, K, redispatch=False):
        self.dims = dict(N=n_bus, G=n_gen, E=n_ess, F=n_fl, R=n_res, S=S, T=T, K=K)
        self.redispatch = bool(redispatch)
        self.sizes = {
            "P": n_gen, "Q": n_gen, "e": n_bus, "f": n_bus,
            "ch": n_ess, "dis": n_ess, "soc": n_ess,
            "inc": n_fl, "dec": n_fl, "rc": n_res, "lc": n_bus,
        }
        if self.redispatch:
            self.sizes.update(up=n_gen, dn=n_gen)
        self.block = sum(self.sizes[f] for f in FAMILIES)
        self.block0 = self.block + (2 * n_gen if self.redispatch else 0)

        self.family_offset = {}
        off = 0
        for name in FAMILIES + (REDISPATCH_FAMILIES if self.redispatch else ()):
            self.family_offset[name] = off
            off += self.sizes[name]

        n0 = S * T * self.block0
        starts = np.empty((K, S, T), dtype=np.int64)
        st = np.arange(S * T).reshape(S, T)
        starts[0] = st * self.block0
        for k in range(1, K):
            starts[k] = n0 + ((k - 1) * S * T + st) * self.block
        self.block_start = starts
        self.size = int(n0 + (K - 1) * S * T * self.block)
        self._flat_starts = starts.ravel()
        self._order = np.argsort(self._flat_starts, kind="stable")

    def family(self, name: str) -> np.ndarray:
        """Positions of a family as an array of shape ``(K, S, T, n)``
        (``(1, S, T, G)`` for the redispatch split families)."""
        width = self.sizes[name]
        base = self.block_start
        if name in REDISPATCH_FAMILIES:
            base = base[:1]
        return base[..., None] + self.family_offset[name] + np.arange(width)

    def index(self, name: str, element: int, s: int, t: int, k: int) -> int:
        if name in REDISPATCH_FAMILIES and k != 0:
            raise KeyError("redispatch split variables exist only in state 0")
        if not 0 <= element < self.sizes[name]:
            raise IndexError(f"{name} has no element {element}")
        return int(self.block_start[k, s, t] + self.family_offset[name] + element)

    def locate(self, i: int) -> tuple[str, int, int, int, int]:
        if not 0 <= i < self.size:
            raise IndexError(i)
        pos = np.searchsorted(self._flat_starts[self._order], i, side="right") - 1
        flat = self._order[pos]
        K, S, T = self.block_start.shape
        k, rem = divmod(int(flat), S * T)
        s, t = divmod(rem, T)
        local = i - int(self.block_start[k, s, t])
        names = FAMILIES + (REDISPATCH_FAMILIES if self.redispatch and k == 0 else ())
        for name in names:
            off = self.family_offset[name]
            if off <= local < off + self.sizes[name]:
                return name, local - off, s, t, k
        raise AssertionError("unreachable")

    def expected_size(self) -> int:
        d = self.dims
        per_block = 2 * d["G"] + 3 * d["N"] + 3 * d["E"] + 2 * d["F"] + d["R"]
        extra = 2 * d["G"] * d["S"] * d["T"] if self.redispatch else 0
        return per_block * d["S"] * d["T"] * d["K"] + extra


def build_index(nn: NormalizedNetwork, sset: ScenarioSet, contingencies=None,
                redispatch: bool = False) -> VariableIndex:
    K = len(nn.contingencies if contingencies is None else contingencies)
    return VariableIndex(nn.n_bus, nn.n_gen, nn.n_ess, nn.n_fl, nn.n_res,
                         sset.n_scenarios, sset.n_periods, K, redispatch)


@dataclass(frozen=True)
class ConstraintLayout:
    n_eq: int
    lo: np.ndarray
    hi: np.ndarray
    tags: dict

    @property
    def m(self) -> int:
        return len(self.lo)

    @property
    def n_ineq(self) -> int:
        return self.m - self.n_eq

    def count(self, eq: str) -> int:
        return int(np.count_nonzero(self.tags["eq"] == eq))

    def describe(self, row: int) -> str:
        t = self.tags
        return (
            f"eq({t['eq'][row]}) elem={t['elem'][row]} s={t['s'][row]} "
            f"t={t['t'][row]} k={t['k'][row]}"
        )


def expected_row_counts(nn: NormalizedNetwork, S: int, T: int, redispatch=False) -> dict:
    """Closed-form row count per family."""
    N, G, E, F = nn.n_bus, nn.n_gen, nn.n_ess, nn.n_fl
    K = len(nn.contingencies)
    L = nn.n_branch
    active = K * L - (K - 1)
    return {
        "2": N * S * T * K,
        "3": N * S * T * K,
        "12": E * S * K * (T - 1),
        "14": E * S * K,
        "18": F * S * K,
        "ref": S * T * K,
        "rd": G * S * T if redispatch else 0,
        "8": active * S * T,
        "9": N * S * T * K,
        "10": G * S * (T - 1),
        "11": G * S * T * (K - 1),
        "15": E * S * T * K,
        "21": F * S * T * K,
    }


def default_curtailment_price(nn: NormalizedNetwork, mode: str, factor: float = 10.0) -> float:
    """``factor`` times the most expensive generator's marginal price at p_max."""
    if nn.n_gen == 0:
        return 0.0
    if mode == REDISPATCH:
        prices = [g.redispatch_cost for g in nn.source.generators if g.redispatch_cost is not None]
        if prices:
            return factor * max(prices)
    marginal = 2.0 * nn.cost_a * nn.p_max * nn.base_mva + nn.cost_b
    return factor * float(marginal.max())


class ScopfModel:
    """Builds the full NLP for one network, scenario set and contingency list.

    ``mode`` selects the generator cost term: ``"production"`` uses the
    quadratic production cost of the state-0 dispatch, ``"redispatch"`` uses
    ``c_g * |P - P_market|`` through nonnegative up/down split variables.
    """

    def __init__(
        self,
        nn: NormalizedNetwork,
        scenarios: ScenarioSet,
        loads: Optional[LoadProfileSet] = None,
        mode: str = PRODUCTION,
        curtailment_factor: float = 10.0,
        eps0: float = 1e-3,
    ):
        mode = objective_mode(mode)
        self.nn = nn
        self.scenarios = scenarios
        self.mode = mode
        self.eps0 = eps0
        S, T = scenarios.n_scenarios, scenarios.n_periods
        K = len(nn.contingencies)
        self.S, self.T, self.K = S, T, K
        self.dt = scenarios.dt
        if loads is None:
            loads = LoadProfileSet.constant(nn.n_bus, T)
        if loads.multipliers.shape != (nn.n_bus, T):
            raise ValueError("load profile shape does not match (buses, periods)")
        self.loads = loads
        self.p_demand = nn.p_load[:, None] * loads.multipliers  # (N, T)
        self.q_demand = nn.q_load[:, None] * loads.multipliers
        with np.errstate(divide="ignore", invalid="ignore"):
            self.q_ratio = np.where(nn.p_load > 0, nn.q_load / nn.p_load, 0.0)
        # available RES power, p.u., (S, T, R)
        self.res_avail = scenarios.profiles[:, :, None] * nn.res_capacity[None, None, :]

        if mode == REDISPATCH:
            missing = [
                g.id for g in nn.source.generators
                if g.redispatch_cost is None or g.p_market is None or len(g.p_market) < T
            ]
            if missing:
                raise ValueError(
                    "redispatch mode needs redispatch_cost and p_market for generator(s) "
                    + ", ".join(missing)
                )
            self.p_market = np.array([g.p_market[:T] for g in nn.source.generators]) / nn.base_mva
            self.c_redispatch = np.array([g.redispatch_cost for g in nn.source.generators])
        else:
            self.p_market = None
            self.c_redispatch = None

        default = default_curtailment_price(nn, mode, curtailment_factor)
        self.lc_price = np.where(np.isnan(nn.lc_cost), default, nn.lc_cost)
        self.gc_price = np.where(np.isnan(nn.gc_cost), default, nn.gc_cost)

        self.views: list[AdmittanceView] = [admittance_view(nn, k) for k in range(K)]
        self.index = VariableIndex(
            nn.n_bus, nn.n_gen, nn.n_ess, nn.n_fl, nn.n_res, S, T, K,
            redispatch=(mode == REDISPATCH),
        )
        self._build()

    # ------------------------------------------------------------------
    def fam(self, name):
        return self._fam[name]

    def _build(self):
        nn, idx = self.nn, self.index
        S, T, K, dt = self.S, self.T, self.K, self.dt
        names = FAMILIES + (REDISPATCH_FAMILIES if idx.redispatch else ())
        self._fam = {name: idx.family(name) for name in names}
        P, Q, E, F = (self._fam[f] for f in ("P", "Q", "e", "f"))
        CH, DIS, SOC = (self._fam[f] for f in ("ch", "dis", "soc"))
        INC, DEC, RC, LC = (self._fam[f] for f in ("inc", "dec", "rc", "lc"))
        s_ax = np.arange(S)[:, None, None]
        t_ax = np.arange(T)[None, :, None]

        rb = RowBuilder()
        # ---------------- equalities
        for k in range(K):
            v = self.views[k]
            fb, tb = v.from_bus, v.to_bus
            Ek, Fk = E[k], F[k]
            n_ax = np.arange(nn.n_bus)[None, None, :]

            rows = rb.new((S, T, nn.n_bus), "2", 0.0, 0.0, elem=n_ax, s=s_ax, t=t_ax, k=k)
            for g, n in enumerate(nn.gen_bus):
                rb.lin(rows[:, :, n], P[k, :, :, g], 1.0)
            for r, n in enumerate(nn.res_bus):
                rb.const(rows[:, :, n], self.res_avail[:, :, r])
                rb.lin(rows[:, :, n], RC[k, :, :, r], -1.0)
            for e, n in enumerate(nn.ess_bus):
                rb.lin(rows[:, :, n], DIS[k, :, :, e], 1.0)
                rb.lin(rows[:, :, n], CH[k, :, :, e], -1.0)
            for f, n in enumerate(nn.fl_bus):
                rb.lin(rows[:, :, n], DEC[k, :, :, f], 1.0)
                rb.lin(rows[:, :, n], INC[k, :, :, f], -1.0)
            rb.lin(rows, LC[k], 1.0)
            rb.const(rows, -self.p_demand.T[None, :, :])
            rb.quad(rows, Ek, Ek, -v.g_sum)
            rb.quad(rows, Fk, Fk, -v.g_sum)
            for a, c in ((fb, tb), (tb, fb)):
                ra = rows[:, :, a]
                rb.quad(ra, Ek[:, :, a], Ek[:, :, c], v.g)
                rb.quad(ra, Fk[:, :, a], Fk[:, :, c], v.g)
                rb.quad(ra, Fk[:, :, a], Ek[:, :, c], v.b)
                rb.quad(ra, Ek[:, :, a], Fk[:, :, c], -v.b)

            rows = rb.new((S, T, nn.n_bus), "3", 0.0, 0.0, elem=n_ax, s=s_ax, t=t_ax, k=k)
            for g, n in enumerate(nn.gen_bus):
                rb.lin(rows[:, :, n], Q[k, :, :, g], 1.0)
            rb.const(rows, -self.q_demand.T[None, :, :])
            rb.lin(rows, LC[k], self.q_ratio)
            rb.quad(rows, Ek, Ek, v.b_sum)
            rb.quad(rows, Fk, Fk, v.b_sum)
            for a, c in ((fb, tb), (tb, fb)):
                ra = rows[:, :, a]
                rb.quad(ra, Ek[:, :, a], Ek[:, :, c], -v.b)
                rb.quad(ra, Fk[:, :, a], Fk[:, :, c], -v.b)
                rb.quad(ra, Fk[:, :, a], Ek[:, :, c], v.g)
                rb.quad(ra, Ek[:, :, a], Fk[:, :, c], -v.g)

        if nn.n_ess:
            e_ax = np.arange(nn.n_ess)
            k_ax = np.arange(K)[:, None, None, None]
            s4 = np.arange(S)[None, :, None, None]
            if T > 1:
                t4 = np.arange(T - 1)[None, None, :, None]
                rows = rb.new((K, S, T - 1, nn.n_ess), "12", 0.0, 0.0, elem=e_ax, s=s4, t=t4, k=k_ax)
                rb.lin(rows, SOC[:, :, 1:], 1.0)
                rb.lin(rows, SOC[:, :, :-1], -1.0)
                rb.lin(rows, CH[:, :, :-1], -dt * nn.eta_ch)
                rb.lin(rows, DIS[:, :, :-1], dt / nn.eta_dis)
            k3 = np.arange(K)[:, None, None]
            s3 = np.arange(S)[None, :, None]
            rows = rb.new((K, S, nn.n_ess), "14", 0.0, 0.0, elem=e_ax, s=s3, t=T - 1, k=k3)
            rb.lin(rows, SOC[:, :, 0], 1.0)
            rb.lin(rows, SOC[:, :, T - 1], -1.0)
            rb.lin(rows, CH[:, :, T - 1], -dt * nn.eta_ch)
            rb.lin(rows, DIS[:, :, T - 1], dt / nn.eta_dis)

        if nn.n_fl:
            k3 = np.arange(K)[:, None, None]
            s3 = np.arange(S)[None, :, None]
            rows = rb.new((K, S, nn.n_fl), "18", 0.0, 0.0, elem=np.arange(nn.n_fl), s=s3, k=k3)
            rb.lin(rows[:, :, None, :], INC, 1.0)
            rb.lin(rows[:, :, None, :], DEC, -1.0)

        k3 = np.arange(K)[:, None, None]
        rows = rb.new((K, S, T), "ref", 0.0, 0.0, elem=nn.ref_bus, s=np.arange(S)[None, :, None],
                      t=np.arange(T)[None, None, :], k=k3)
        rb.lin(rows, F[:, :, :, nn.ref_bus], 1.0)

        if idx.redispatch:
            rows = rb.new((S, T, nn.n_gen), "rd", 0.0, 0.0, elem=np.arange(nn.n_gen), s=s_ax, t=t_ax, k=0)
            rb.lin(rows, P[0], 1.0)
            rb.lin(rows, self._fam["up"][0], -1.0)
            rb.lin(rows, self._fam["dn"][0], 1.0)
            rb.const(rows, -self.p_market.T[None, :, :])
        n_eq = rb.m

        # ---------------- inequalities
        for k in range(K):
            v = self.views[k]
            fb, tb = v.from_bus, v.to_bus
            Ek, Fk = E[k], F[k]
            w = v.g**2 + v.b**2
            rows = rb.new((S, T, len(fb)), "8", -np.inf, v.i_max**2,
                          elem=v.branches[None, None, :], s=s_ax, t=t_ax, k=k)
            for X in (Ek, Fk):
                rb.quad(rows, X[:, :, fb], X[:, :, fb], w)
                rb.quad(rows, X[:, :, tb], X[:, :, tb], w)
                rb.quad(rows, X[:, :, fb], X[:, :, tb], -2.0 * w)

        n4 = np.arange(nn.n_bus)
        k4 = np.arange(K)[:, None, None, None]
        s4 = np.arange(S)[None, :, None, None]
        t4 = np.arange(T)[None, None, :, None]
        rows = rb.new((K, S, T, nn.n_bus), "9", nn.v_min**2, nn.v_max**2, elem=n4, s=s4, t=t4, k=k4)
        rb.quad(rows, E, E, 1.0)
        rb.quad(rows, F, F, 1.0)

        if nn.n_gen and T > 1:
            rows = rb.new((S, T - 1, nn.n_gen), "10", -nn.ramp, nn.ramp,
                          elem=np.arange(nn.n_gen), s=s_ax, t=np.arange(1, T)[None, :, None], k=0)
            rb.lin(rows, P[0, :, :-1], 1.0)
            rb.lin(rows, P[0, :, 1:], -1.0)
        if nn.n_gen and K > 1:
            rows = rb.new((K - 1, S, T, nn.n_gen), "11", -nn.ramp, nn.ramp,
                          elem=np.arange(nn.n_gen), s=s4, t=t4,
                          k=np.arange(1, K)[:, None, None, None])
            rb.lin(rows, P[1:], 1.0)
            rb.lin(rows, P[0][None], -1.0)
        if nn.n_ess:
            rows = rb.new((K, S, T, nn.n_ess), "15", -np.inf, 1.0,
                          elem=np.arange(nn.n_ess), s=s4, t=t4, k=k4)
            rb.lin(rows, CH, 1.0 / nn.p_ch_max)
            rb.lin(rows, DIS, 1.0 / nn.p_dis_max)
        if nn.n_fl:
            rows = rb.new((K, S, T, nn.n_fl), "21", -np.inf, 1.0,
                          elem=np.arange(nn.n_fl), s=s4, t=t4, k=k4)
            rb.lin(rows, DEC, 1.0 / nn.p_dec_max)
            rb.lin(rows, INC, 1.0 / nn.p_inc_max)

        cons, lo, hi, tags = rb.build(idx.size)
        self.cons = cons
        self.layout = ConstraintLayout(n_eq=n_eq, lo=lo, hi=hi, tags=tags)

        # ---------------- objective
        ob = RowBuilder()
        row = ob.new(1, "obj", 0.0, 0.0)[0]
        Sb = nn.base_mva
        w = (self.scenarios.probabilities * dt)[:, None, None]  # (S, 1, 1)
        if self.mode == PRODUCTION:
            ob.quad(row, P[0], P[0], w * nn.cost_a * Sb**2)
            ob.lin(row, P[0], w * nn.cost_b * Sb)
            ob.const(row, float(np.sum(w * nn.cost_c) * T))
        else:
            ob.lin(row, self._fam["up"][0], w * self.c_redispatch * Sb)
            ob.lin(row, self._fam["dn"][0], w * self.c_redispatch * Sb)
        wk = w[None]  # (1, S, 1, 1)
        if nn.n_ess:
            ob.lin(row, CH, wk * nn.ess_cost * Sb)
            ob.lin(row, DIS, wk * nn.ess_cost * Sb)
        if nn.n_fl:
            ob.lin(row, INC, wk * nn.fl_cost * Sb)
            ob.lin(row, DEC, wk * nn.fl_cost * Sb)
        if nn.n_res:
            ob.lin(row, RC, wk * self.gc_price * Sb)
        ob.lin(row, LC, wk * self.lc_price * Sb)
        self.obj, _, _, _ = ob.build(idx.size)

        self.x_lo, self.x_hi = self._variable_bounds()

    def _variable_bounds(self):
        nn, n = self.nn, self.index.size
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        F = self._fam

        def put(name, low, high):
            ix = F[name]
            lo[ix] = np.broadcast_to(low, ix.shape)
            hi[ix] = np.broadcast_to(high, ix.shape)

        put("P", nn.p_min, nn.p_max)
        put("Q", nn.q_min, nn.q_max)
        put("ch", 0.0, nn.p_ch_max)
        put("dis", 0.0, nn.p_dis_max)
        put("soc", nn.soc_min, nn.soc_max)
        put("inc", 0.0, nn.p_inc_max)
        put("dec", 0.0, nn.p_dec_max)
        put("rc", 0.0, self.res_avail[None])
        put("lc", 0.0, self.p_demand.T[None, None])
        if self.index.redispatch:
            put("up", 0.0, np.inf)
            put("dn", 0.0, np.inf)
        return lo, hi

    # ------------------------------------------------------------------
    @property
    def n(self) -> int:
        return self.index.size

    @property
    def m(self) -> int:
        return self.layout.m

    def initial_point(self) -> np.ndarray:
        """Flat voltages, proportionally loaded generators, storage at its
        initial energy and small interior values for every flexibility."""
        nn, F = self.nn, self._fam
        x = np.zeros(self.n)
        x[F["e"]] = 1.0
        x[F["f"]] = 0.0

        need = self.p_demand.sum(axis=0)[None, :] - self.res_avail.sum(axis=2)  # (S, T)
        span = nn.p_max - nn.p_min
        if nn.n_gen:
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = (need - nn.p_min.sum()) / span.sum() if span.sum() > 0 else np.zeros_like(need)
            frac = np.clip(frac, 0.01, 0.99)
            p = nn.p_min + frac[..., None] * span  # (S, T, G)
            x[F["P"]] = p[None]
            x[F["Q"]] = 0.5 * (nn.q_min + nn.q_max)

        def small(name, upper):
            ix = F[name]
            up = np.broadcast_to(upper, ix.shape)
            x[ix] = np.where(up > 0, np.minimum(self.eps0, 0.5 * up), 0.0)

        small("ch", nn.p_ch_max)
        small("dis", nn.p_dis_max)
        small("inc", nn.p_inc_max)
        small("dec", nn.p_dec_max)
        small("rc", self.res_avail[None])
        small("lc", self.p_demand.T[None, None])

        if nn.n_ess:
            span = nn.soc_max - nn.soc_min
            margin = np.minimum(self.eps0 * np.maximum(span, 1.0), 0.5 * span)
            soc = np.clip(nn.soc_initial, nn.soc_min + margin, nn.soc_max - margin)
            x[F["soc"]] = soc

        if self.index.redispatch:
            dev = x[F["P"][0]] - self.p_market.T[None]
            x[F["up"][0]] = np.maximum(dev, 0.0) + self.eps0
            x[F["dn"][0]] = np.maximum(-dev, 0.0) + self.eps0
        return x

    def bounds(self):
        return self.x_lo, self.x_hi, self.layout.lo, self.layout.hi

    def residuals(self, x) -> np.ndarray:
        r = self.cons.value(x)
        if not np.all(np.isfinite(r)):
            bad = int(np.flatnonzero(~np.isfinite(r))[0])
            raise FloatingPointError(f"non-finite residual in row {bad}: {self.layout.describe(bad)}")
        return r

    def objective(self, x) -> float:
        return float(self.obj.value(x)[0])

    eval_residuals = residuals
    eval_objective = objective

    def eval_jacobian(self, x):
        return sp.csr_matrix(
            (self.cons.jac_values(x), (self.cons.jac_rows, self.cons.jac_cols)), shape=(self.m, self.n)
        )

    def eval_lagrangian_hessian(self, x, lam, sigma=1.0):
        return self._problem().hessian(x, lam, sigma)

    def injections(self, x, k: Optional[int] = None):
        """Net injections into the network, arrays ``(K, S, T, N)`` in p.u."""
        E = x[self._fam["e"]]
        F = x[self._fam["f"]]
        P = np.zeros_like(E)
        Q = np.zeros_like(E)
        for kk in range(self.K) if k is None else [k]:
            v = self.views[kk]
            e, f = E[kk], F[kk]
            vv = e**2 + f**2
            P[kk] = vv * v.g_sum
            Q[kk] = -vv * v.b_sum
            for a, c in ((v.from_bus, v.to_bus), (v.to_bus, v.from_bus)):
                re = e[..., a] * e[..., c] + f[..., a] * f[..., c]
                im = f[..., a] * e[..., c] - e[..., a] * f[..., c]
                np.add.at(P[kk], (slice(None), slice(None), a), -(re * v.g + im * v.b))
                np.add.at(Q[kk], (slice(None), slice(None), a), re * v.b - im * v.g)
        return P, Q

    def eval_injections(self, x, n, s, t, k) -> tuple[float, float]:
        """Active and reactive injection at one bus, straight from the
        rectangular power-flow expressions."""
        v = self.views[k]
        ix = self.index
        e = lambda j: x[ix.index("e", j, s, t, k)]  # noqa: E731
        f = lambda j: x[ix.index("f", j, s, t, k)]  # noqa: E731
        vv = e(n) ** 2 + f(n) ** 2
        p = vv * v.g_sum[n]
        q = -vv * v.b_sum[n]
        for a, c, g, b in zip(v.from_bus, v.to_bus, v.g, v.b):
            if n not in (a, c):
                continue
            m = c if a == n else a
            re = e(n) * e(m) + f(n) * f(m)
            im = f(n) * e(m) - e(n) * f(m)
            p -= re * g + im * b
            q += re * b - im * g
        return float(p), float(q)

    def _problem(self) -> NlpProblem:
        if getattr(self, "_nlp", None) is None:
            self._nlp = self.problem()
        return self._nlp

    def problem(self) -> NlpProblem:
        x0 = self.initial_point()
        return qcqp_problem(
            self.obj, self.cons, self.x_lo, self.x_hi, self.layout.lo, self.layout.hi, x0,
            schedule=self.schedule,
            meta={"model": self, "index": self.index, "layout": self.layout},
        )

    def schedule(self, x) -> "DispatchSchedule":
        return DispatchSchedule.from_model(self, x)


@dataclass
class DispatchSchedule:
    """Solution view in physical units. Arrays are indexed ``[k, s, t, element]``."""

    base_mva: float
    dt: float
    probabilities: np.ndarray
    p_gen: np.ndarray
    q_gen: np.ndarray
    e: np.ndarray
    f: np.ndarray
    p_ch: np.ndarray
    p_dis: np.ndarray
    soc: np.ndarray
    p_inc: np.ndarray
    p_dec: np.ndarray
    res_curtail: np.ndarray
    load_curtail: np.ndarray
    p_inj: np.ndarray
    q_inj: np.ndarray
    res_available: np.ndarray  # (S, T, R)
    p_demand: np.ndarray  # (N, T)
    q_demand: np.ndarray
    labels: dict

    @property
    def v_mag(self) -> np.ndarray:
        return np.hypot(self.e, self.f)

    @classmethod
    def from_model(cls, model: ScopfModel, x) -> "DispatchSchedule":
        S = model.nn.base_mva
        F = model.fam
        src = model.nn.source
        p_inj, q_inj = model.injections(x)
        return cls(
            base_mva=S,
            dt=model.dt,
            probabilities=np.asarray(model.scenarios.probabilities),
            p_gen=x[F("P")] * S,
            q_gen=x[F("Q")] * S,
            e=x[F("e")].copy(),
            f=x[F("f")].copy(),
            p_ch=x[F("ch")] * S,
            p_dis=x[F("dis")] * S,
            soc=x[F("soc")] * S,
            p_inc=x[F("inc")] * S,
            p_dec=x[F("dec")] * S,
            res_curtail=x[F("rc")] * S,
            load_curtail=x[F("lc")] * S,
            p_inj=p_inj * S,
            q_inj=q_inj * S,
            res_available=model.res_avail * S,
            p_demand=model.p_demand * S,
            q_demand=model.q_demand * S,
            labels={
                "bus": [b.id for b in src.buses],
                "gen": [g.id for g in src.generators],
                "ess": [e.id for e in src.storage],
                "fl": [f.id for f in src.flexible_loads],
                "res": [r.id for r in src.res_plants],
                "state": [model.nn.contingencies.label(k) for k in range(model.K)],
                "scenario": list(model.scenarios.names),
            },
        )
