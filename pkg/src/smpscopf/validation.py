"""Formulation-free checks of candidate solutions.

Everything here is recomputed from the physical network data with plain
scalar loops, so a bug in the vectorized model builder cannot hide itself.
Power and energy violations are reported in per unit of ``base_mva``
(energy in p.u. hours), currents in p.u. of the branch current base and
voltages in p.u.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .grid import Branch, Bus, ContingencySpec, Generator, Network
from .nlp import NlpProblem
from .scenarios import LoadProfileSet, ScenarioSet

FAMILIES = tuple(str(i) for i in range(2, 24))


@dataclass
class Offender:
    eq: str
    element: str
    s: int
    t: int
    k: int
    violation: float


@dataclass
class FeasibilityReport:
    tol: float
    families: dict  # equation id -> max violation
    offenders: list = field(default_factory=list)  # worst first

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.families.values())

    @property
    def max_violation(self) -> float:
        return max(self.families.values(), default=0.0)

    def failing(self) -> list[str]:
        return [eq for eq, v in self.families.items() if v > self.tol]

    def to_dict(self) -> dict:
        return {
            "tol": self.tol,
            "passed": self.passed,
            "max_violation": self.max_violation,
            "families": {k: float(v) for k, v in self.families.items()},
            "offenders": [vars(o) for o in self.offenders],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class _Collector:
    def __init__(self, keep: int):
        self.families = {eq: 0.0 for eq in FAMILIES}
        self.offenders: list[Offender] = []
        self.keep = keep

    def add(self, eq, element, s, t, k, violation):
        v = float(violation)
        if not math.isfinite(v):
            v = math.inf
        if v > self.families[eq]:
            self.families[eq] = v
        if v > 0:
            self.offenders.append(Offender(eq, str(element), s, t, k, v))

    def report(self, tol):
        worst = sorted(self.offenders, key=lambda o: -o.violation)[: self.keep]
        return FeasibilityReport(tol, dict(self.families), worst)


def _below(value, low):
    return max(low - value, 0.0)


def _outside(value, low, high):
    return max(low - value, value - high, 0.0)


def _line_params(br: Branch, base: float):
    z_base = br.v_nom**2 / base
    r, x = br.r / z_base, br.x / z_base
    zz = r * r + x * x
    g, b = r / zz, -x / zz
    b_half = 0.5 * br.b_sh * 1e-6 * z_base
    i_base = base * 1e3 / (math.sqrt(3.0) * br.v_nom)
    return g, b, b_half, br.i_max / i_base


def _states(net: Network, K) -> ContingencySpec:
    if K is None:
        return net.contingencies
    if isinstance(K, ContingencySpec):
        return K
    return ContingencySpec(net.contingencies.outages[: int(K)])


def check_feasibility(net: Network, sset: ScenarioSet, K, solution, tol: float = 1e-5,
                      loads: Optional[LoadProfileSet] = None, keep: int = 20) -> FeasibilityReport:
    """Evaluate every constraint family on a schedule in physical units.

    ``solution`` is a :class:`~smpscopf.formulation.DispatchSchedule`;
    ``K`` is a :class:`ContingencySpec`, a state count, or ``None`` for the
    network's own list.
    """
    states = _states(net, K)
    base = float(solution.base_mva)
    dt = float(sset.dt)
    N, G, E, F, R = (len(net.buses), len(net.generators), len(net.storage),
                     len(net.flexible_loads), len(net.res_plants))
    S, T, Kn = sset.n_scenarios, sset.n_periods, len(states)
    expect = {
        "p_gen": (Kn, S, T, G), "q_gen": (Kn, S, T, G), "e": (Kn, S, T, N), "f": (Kn, S, T, N),
        "p_ch": (Kn, S, T, E), "p_dis": (Kn, S, T, E), "soc": (Kn, S, T, E),
        "p_inc": (Kn, S, T, F), "p_dec": (Kn, S, T, F), "res_curtail": (Kn, S, T, R),
        "load_curtail": (Kn, S, T, N),
    }
    for name, shape in expect.items():
        got = np.shape(getattr(solution, name))
        if got != shape:
            raise ValueError(f"solution field {name} has shape {got}, expected {shape}")
    labels = getattr(solution, "labels", {}) or {}
    if labels.get("bus") and list(labels["bus"]) != [b.id for b in net.buses]:
        raise ValueError("solution bus order does not match the network")

    mult = np.ones((N, T)) if loads is None else np.asarray(loads.multipliers)
    pos = {b.id: i for i, b in enumerate(net.buses)}
    out = _Collector(keep)

    def pd(n, t):
        return net.buses[n].p_load * mult[n, t] / base

    def qd(n, t):
        return net.buses[n].q_load * mult[n, t] / base

    for k in range(Kn):
        out_id = states.outages[k]
        lines = []
        for br in net.branches:
            if br.id == out_id:
                continue
            g, b, bh, imax = _line_params(br, base)
            lines.append((br.id, pos[br.from_bus], pos[br.to_bus], g, b, bh, imax))
        for s in range(S):
            for t in range(T):
                e = [float(solution.e[k, s, t, n]) for n in range(N)]
                f = [float(solution.f[k, s, t, n]) for n in range(N)]
                # injections straight from the rectangular power-flow expressions
                p_inj = [0.0] * N
                q_inj = [0.0] * N
                for _, a, c, g, b, bh, _ in lines:
                    for n, m in ((a, c), (c, a)):
                        vv = e[n] ** 2 + f[n] ** 2
                        re = e[n] * e[m] + f[n] * f[m]
                        im = f[n] * e[m] - e[n] * f[m]
                        p_inj[n] += vv * g - (re * g + im * b)
                        q_inj[n] += -vv * (bh + b) + (re * b - im * g)
                p_bal = [0.0] * N
                q_bal = [0.0] * N
                for gi, gen in enumerate(net.generators):
                    n = pos[gen.bus]
                    p_bal[n] += solution.p_gen[k, s, t, gi] / base
                    q_bal[n] += solution.q_gen[k, s, t, gi] / base
                for ri, plant in enumerate(net.res_plants):
                    n = pos[plant.bus]
                    p_bal[n] += plant.capacity * sset.profiles[s, t] / base
                    p_bal[n] -= solution.res_curtail[k, s, t, ri] / base
                for ei, unit in enumerate(net.storage):
                    n = pos[unit.bus]
                    p_bal[n] += (solution.p_dis[k, s, t, ei] - solution.p_ch[k, s, t, ei]) / base
                for fi, fl in enumerate(net.flexible_loads):
                    n = pos[fl.bus]
                    p_bal[n] += (solution.p_dec[k, s, t, fi] - solution.p_inc[k, s, t, fi]) / base
                for n, bus in enumerate(net.buses):
                    lc = solution.load_curtail[k, s, t, n] / base
                    p_bal[n] += lc
                    qc = lc * bus.q_load / bus.p_load if bus.p_load > 0 else 0.0
                    out.add("2", bus.id, s, t, k, abs(p_bal[n] - pd(n, t) - p_inj[n]))
                    out.add("3", bus.id, s, t, k, abs(q_bal[n] - (qd(n, t) - qc + q_inj[n])))
                    if hasattr(solution, "p_inj"):
                        out.add("4", bus.id, s, t, k, abs(solution.p_inj[k, s, t, n] / base - p_inj[n]))
                        out.add("5", bus.id, s, t, k, abs(solution.q_inj[k, s, t, n] / base - q_inj[n]))
                    vm = math.hypot(e[n], f[n])
                    out.add("9", bus.id, s, t, k, _outside(vm, bus.v_min, bus.v_max))
                    out.add("22", bus.id, s, t, k, _outside(lc, 0.0, pd(n, t)))
                for lid, a, c, g, b, _, imax in lines:
                    cur = math.sqrt((g * g + b * b) * ((e[a] - e[c]) ** 2 + (f[a] - f[c]) ** 2))
                    out.add("8", lid, s, t, k, _below(imax, cur))
                for gi, gen in enumerate(net.generators):
                    p = solution.p_gen[k, s, t, gi] / base
                    q = solution.q_gen[k, s, t, gi] / base
                    out.add("6", gen.id, s, t, k, _outside(p, gen.p_min / base, gen.p_max / base))
                    out.add("7", gen.id, s, t, k, _outside(q, gen.q_min / base, gen.q_max / base))
                    if k == 0 and t >= 1:
                        step = abs(solution.p_gen[0, s, t - 1, gi] - solution.p_gen[0, s, t, gi]) / base
                        out.add("10", gen.id, s, t, k, _below(gen.ramp / base, step))
                    if k >= 1:
                        gap = abs(solution.p_gen[k, s, t, gi] - solution.p_gen[0, s, t, gi]) / base
                        out.add("11", gen.id, s, t, k, _below(gen.ramp / base, gap))
                for ei, unit in enumerate(net.storage):
                    ch = solution.p_ch[k, s, t, ei] / base
                    dis = solution.p_dis[k, s, t, ei] / base
                    soc = solution.soc[k, s, t, ei] / base
                    # the step out of the last period closes the cycle
                    nxt = solution.soc[k, s, (t + 1) % T, ei] / base
                    move = dt * (unit.eta_ch * ch - dis / unit.eta_dis)
                    out.add("12" if t < T - 1 else "14", unit.id, s, t, k, abs(nxt - soc - move))
                    out.add("13", unit.id, s, t, k,
                            _outside(soc, unit.soc_min / base, unit.soc_max / base))
                    out.add("15", unit.id, s, t, k,
                            _below(1.0, ch / (unit.p_ch_max / base) + dis / (unit.p_dis_max / base)))
                    out.add("16", unit.id, s, t, k, _outside(ch, 0.0, unit.p_ch_max / base))
                    out.add("17", unit.id, s, t, k, _outside(dis, 0.0, unit.p_dis_max / base))
                for fi, fl in enumerate(net.flexible_loads):
                    inc = solution.p_inc[k, s, t, fi] / base
                    dec = solution.p_dec[k, s, t, fi] / base
                    out.add("19", fl.id, s, t, k, _outside(inc, 0.0, fl.p_inc_max / base))
                    out.add("20", fl.id, s, t, k, _outside(dec, 0.0, fl.p_dec_max / base))
                    out.add("21", fl.id, s, t, k,
                            _below(1.0, dec / (fl.p_dec_max / base) + inc / (fl.p_inc_max / base)))
                for ri, plant in enumerate(net.res_plants):
                    rc = solution.res_curtail[k, s, t, ri] / base
                    avail = plant.capacity * sset.profiles[s, t] / base
                    out.add("23", plant.id, s, t, k, _outside(rc, 0.0, avail))
            for fi, fl in enumerate(net.flexible_loads):
                total = sum(
                    dt * (solution.p_inc[k, s, t, fi] - solution.p_dec[k, s, t, fi]) for t in range(T)
                ) / base
                out.add("18", fl.id, s, -1, k, abs(total))
    return out.report(tol)


# ---------------------------------------------------------------------------
# derivative checks


@dataclass
class FdReport:
    max_rel_error: float
    gradient_error: float
    jacobian_error: float
    hessian_error: float
    worst: tuple  # (kind, row, col)
    where: dict = field(default_factory=dict)  # kind -> (row, col) of its largest error

    def flagged(self, threshold: float = 1e-2) -> bool:
        return self.max_rel_error > threshold


def _rel(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1.0)


def fd_check(p: NlpProblem, x, h: float = 1e-6, lam=None, sigma: float = 1.0,
             columns=None, seed: int = 0) -> FdReport:
    """Central differences of objective, residuals and Lagrangian gradient
    against the analytic gradient, Jacobian and Hessian.

    ``columns`` restricts the check to a subset of variables.
    """
    x = np.asarray(x, float)
    if lam is None:
        lam = np.random.default_rng(seed).standard_normal(p.m)
    cols = np.arange(p.n) if columns is None else np.asarray(columns)
    g = p.gradient(x)
    J = p.jacobian(x).tocsc()
    H = p.hessian(x, lam, sigma)
    Hf = (H + H.T - sp.diags(H.diagonal())).tocsc()

    def lag_grad(z):
        return sigma * p.gradient(z) + p.jacobian(z).T @ lam

    worst = (None, -1, -1)
    errs = {"g": 0.0, "J": 0.0, "H": 0.0}
    where = {}
    for j in cols:
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        dg = (p.objective(xp) - p.objective(xm)) / (2 * h)
        e = float(_rel(np.array([g[j]]), np.array([dg]))[0])
        if e > errs["g"]:
            errs["g"] = e
            where["gradient"] = (0, int(j))
            if e >= max(errs.values()):
                worst = ("gradient", 0, int(j))
        dc = (p.constraints(xp) - p.constraints(xm)) / (2 * h)
        col = J[:, j].toarray().ravel()
        r = _rel(col, dc)
        if len(r) and r.max() > errs["J"]:
            errs["J"] = float(r.max())
            where["jacobian"] = (int(r.argmax()), int(j))
            if errs["J"] >= max(errs.values()):
                worst = ("jacobian", int(r.argmax()), int(j))
        dl = (lag_grad(xp) - lag_grad(xm)) / (2 * h)
        hcol = Hf[:, j].toarray().ravel()
        r = _rel(hcol, dl)
        if r.max() > errs["H"]:
            errs["H"] = float(r.max())
            where["hessian"] = (int(r.argmax()), int(j))
            if errs["H"] >= max(errs.values()):
                worst = ("hessian", int(r.argmax()), int(j))
    return FdReport(max(errs.values()), errs["g"], errs["J"], errs["H"], worst, where)


def random_interior_point(p: NlpProblem, rng, spread: float = 0.05):
    """Point strictly inside the variable bounds, near ``p.x0``."""
    lo, hi = p.x_lo, p.x_hi
    x = np.asarray(p.x0, float) + spread * rng.standard_normal(p.n)
    fin_lo, fin_hi = np.isfinite(lo), np.isfinite(hi)
    both = fin_lo & fin_hi & (hi > lo)
    u = rng.uniform(0.1, 0.9, p.n)
    x[both] = lo[both] + u[both] * (hi[both] - lo[both])
    only_lo = fin_lo & ~fin_hi
    x[only_lo] = lo[only_lo] + rng.uniform(0.1, 1.0, only_lo.sum())
    only_hi = fin_hi & ~fin_lo
    x[only_hi] = hi[only_hi] - rng.uniform(0.1, 1.0, only_hi.sum())
    fixed = lo == hi
    x[fixed] = lo[fixed]
    return x


# ---------------------------------------------------------------------------
# brute-force oracle


class GridInfeasible(RuntimeError):
    status = "infeasible-detected"


@dataclass
class BruteForceResult:
    cost: float
    p_gen: tuple  # MW, (bus-1 generator, bus-2 generator)
    v: tuple  # p.u.
    theta: float  # angle of bus 1 relative to bus 2, rad
    feasible_points: int


def mini_case(load=(300.0, 100.0, 50.0, 20.0)) -> Network:
    """Two buses, one line, a generator on each bus; bus 2 is the reference."""
    p1, q1, p2, q2 = load
    return Network(
        buses=(
            Bus("A", 0.95, 1.05, p1, q1),
            Bus("B", 0.95, 1.05, p2, q2, is_slack_angle_ref=True),
        ),
        branches=(Branch("AB", "A", "B", 4.0, 40.0, 50.0, 1000.0, 230.0),),
        generators=(
            Generator("GA", "A", 50.0, 250.0, -100.0, 150.0, 500.0, 0.04, 20.0, 50.0),
            Generator("GB", "B", 0.0, 400.0, -100.0, 150.0, 500.0, 0.01, 30.0, 50.0),
        ),
    )


def brute_force_mini(net: Network, resolution: int = 200, base_mva: float = 100.0,
                     refine: int = 2) -> BruteForceResult:
    """Exhaustive search over (P_G at bus 1, |V1|, |V2|).

    The angle follows from the bus-1 active balance, the bus-2 dispatch from
    the bus-2 balance, reactive outputs from the reactive balances. Points
    violating any limit are dropped. ``refine`` extra passes repeat the
    search on a box of two grid cells around the incumbent.
    """
    if len(net.buses) != 2 or len(net.branches) != 1:
        raise ValueError("brute_force_mini needs exactly 2 buses and 1 branch")
    if net.storage or net.flexible_loads or net.res_plants:
        raise ValueError("brute_force_mini does not handle ESS, FL or RES")
    bus_ids = [b.id for b in net.buses]
    gens = [[g for g in net.generators if g.bus == bid] for bid in bus_ids]
    if len(gens[0]) != 1 or len(gens[1]) != 1:
        raise ValueError("brute_force_mini needs one generator on each bus")
    g1, g2 = gens[0][0], gens[1][0]
    br = net.branches[0]
    if br.from_bus != bus_ids[0]:
        raise ValueError("branch must run from bus 1 to bus 2")
    S = base_mva
    g, b, bh, imax = _line_params(br, S)
    y = math.hypot(g, b)
    phi = math.atan2(b, g)
    b1, b2 = net.buses
    pd1, qd1, pd2, qd2 = b1.p_load / S, b1.q_load / S, b2.p_load / S, b2.q_load / S

    def cost(p1, p2):
        P1, P2 = p1 * S, p2 * S
        return (g1.cost_a * P1**2 + g1.cost_b * P1 + g1.cost_c
                + g2.cost_a * P2**2 + g2.cost_b * P2 + g2.cost_c)

    def search(pr, v1r, v2r):
        P1 = np.linspace(*pr, resolution + 1)[:, None, None]
        V1 = np.linspace(*v1r, resolution + 1)[None, :, None]
        V2 = np.linspace(*v2r, resolution + 1)[None, None, :]
        p1 = P1 / S
        inj1 = p1 - pd1
        arg = (g * V1**2 - inj1) / (V1 * V2 * y)
        ok = np.abs(arg) <= 1.0
        best = (math.inf, None)
        count = 0
        for sign in (1.0, -1.0):
            th = phi + sign * np.arccos(np.clip(arg, -1.0, 1.0))
            th = (th + np.pi) % (2 * np.pi) - np.pi
            c, s_ = np.cos(th), np.sin(th)
            # bus 2 sees the opposite angle
            pinj2 = g * V2**2 - V1 * V2 * (g * c - b * s_)
            qinj1 = -(b + bh) * V1**2 + V1 * V2 * (b * c - g * s_)
            qinj2 = -(b + bh) * V2**2 + V1 * V2 * (b * c + g * s_)
            p2 = pd2 + pinj2
            q1 = qd1 + qinj1
            q2 = qd2 + qinj2
            cur2 = y**2 * (V1**2 + V2**2 - 2 * V1 * V2 * c)
            feas = (
                ok
                & (p2 >= g2.p_min / S) & (p2 <= g2.p_max / S)
                & (q1 >= g1.q_min / S) & (q1 <= g1.q_max / S)
                & (q2 >= g2.q_min / S) & (q2 <= g2.q_max / S)
                & (cur2 <= imax**2)
                & (np.abs(th) <= np.pi / 2)
            )
            feas = np.broadcast_to(feas, arg.shape)
            count += int(feas.sum())
            if not feas.any():
                continue
            cst = np.where(feas, cost(np.broadcast_to(p1, arg.shape), p2), np.inf)
            i = np.unravel_index(int(np.argmin(cst)), cst.shape)
            if cst[i] < best[0]:
                best = (float(cst[i]), (float(P1.ravel()[i[0]]), float(p2[i] * S),
                                        float(V1.ravel()[i[1]]), float(V2.ravel()[i[2]]), float(th[i])))
        return best, count

    pr = (g1.p_min, g1.p_max)
    v1r = (b1.v_min, b1.v_max)
    v2r = (b2.v_min, b2.v_max)
    (best, arg), count = search(pr, v1r, v2r)
    if arg is None:
        raise GridInfeasible("no feasible grid point")
    for _ in range(refine):
        dp = 2 * (pr[1] - pr[0]) / resolution
        dv1 = 2 * (v1r[1] - v1r[0]) / resolution
        dv2 = 2 * (v2r[1] - v2r[0]) / resolution
        pr = (max(g1.p_min, arg[0] - dp), min(g1.p_max, arg[0] + dp))
        v1r = (max(b1.v_min, arg[2] - dv1), min(b1.v_max, arg[2] + dv1))
        v2r = (max(b2.v_min, arg[3] - dv2), min(b2.v_max, arg[3] + dv2))
        (c2, a2), n2 = search(pr, v1r, v2r)
        count += n2
        if a2 is not None and c2 <= best:
            best, arg = c2, a2
    return BruteForceResult(best, (arg[0], arg[1]), (arg[2], arg[3]), arg[4], count)


# ---------------------------------------------------------------------------
# exclusivity


@dataclass
class ExclusivityReport:
    eps: float
    ess_max_overlap: float  # max over (e, s, t, k) of min(ch, dis), p.u.
    fl_max_overlap: float
    worst_ess: Optional[tuple] = None
    worst_fl: Optional[tuple] = None

    @property
    def passed(self) -> bool:
        return self.ess_max_overlap <= self.eps and self.fl_max_overlap <= self.eps


def check_exclusivity(solution, eps: float = 1e-4) -> ExclusivityReport:
    """Largest simultaneous charge/discharge and increase/decrease, in p.u."""
    base = float(solution.base_mva)

    def overlap(a, b):
        if np.size(a) == 0:
            return 0.0, None
        m = np.minimum(np.asarray(a), np.asarray(b)) / base
        i = np.unravel_index(int(np.argmax(m)), m.shape)
        return float(m[i]), tuple(int(v) for v in i)

    e, we = overlap(solution.p_ch, solution.p_dis)
    f, wf = overlap(solution.p_inc, solution.p_dec)
    return ExclusivityReport(eps, e, f, we, wf)

