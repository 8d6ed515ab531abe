"""Cost breakdowns, schedule tables and timing rows.

Numeric artifacts use a fixed six-significant-digit format so that equal
inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .formulation import PRODUCTION, DispatchSchedule, ScopfModel

PARTS = ("CG", "LC", "GC", "FL", "ESS")


def fmt(v) -> str:
    """Six significant digits, no negative zero."""
    v = float(v)
    if v == 0 or abs(v) < 1e-300:
        return "0"
    s = f"{v:.6g}"
    return "0" if s in ("-0", "0") else s


@dataclass
class CostReport:
    """Expected costs in EUR, split by normal state (k = 0) and the
    post-contingency states (k >= 1, unweighted sum over k)."""

    normal: dict
    post: dict
    total: float

    def part(self, name: str) -> float:
        return self.normal[name] + self.post[name]

    @property
    def curtailment(self) -> float:
        return self.part("LC") + self.part("GC")

    def rows(self):
        yield ["part", "normal", "post_contingency", "total"]
        for p in PARTS:
            yield [p, fmt(self.normal[p]), fmt(self.post[p]), fmt(self.part(p))]
        yield ["total", fmt(sum(self.normal.values())), fmt(sum(self.post.values())), fmt(self.total)]

    def to_dict(self) -> dict:
        return {
            "normal": {k: float(v) for k, v in self.normal.items()},
            "post": {k: float(v) for k, v in self.post.items()},
            "total": float(self.total),
        }


def cost_report(model: ScopfModel, x) -> CostReport:
    sch = model.schedule(x)
    nn = model.nn
    w = np.asarray(model.scenarios.probabilities) * model.dt  # (S,)

    def weighted(arr, price):
        # arr (K, S, T, n) in MW, price per element in EUR/MWh
        a = np.asarray(arr) * np.asarray(price)
        a = a.sum(axis=(2, 3)) if a.ndim == 4 else a
        per_k = (a * w[None, :]).sum(axis=1)
        return float(per_k[0]), float(per_k[1:].sum())

    if model.mode == PRODUCTION:
        P = sch.p_gen[0]
        gen = (nn.cost_a * P**2 + nn.cost_b * P + nn.cost_c).sum(axis=(1, 2))
    else:
        dev = np.abs(sch.p_gen[0] - model.p_market.T[None] * nn.base_mva)
        gen = (dev * model.c_redispatch).sum(axis=(1, 2))
    normal = {"CG": float((gen * w).sum())}
    post = {"CG": 0.0}
    for name, arrs, price in (
        ("LC", (sch.load_curtail,), model.lc_price),
        ("GC", (sch.res_curtail,), model.gc_price),
        ("FL", (sch.p_inc, sch.p_dec), nn.fl_cost),
        ("ESS", (sch.p_ch, sch.p_dis), nn.ess_cost),
    ):
        n0 = p0 = 0.0
        for arr in arrs:
            if np.size(arr):
                a, b = weighted(arr, price)
                n0, p0 = n0 + a, p0 + b
        normal[name], post[name] = n0, p0
    total = sum(normal.values()) + sum(post.values())
    return CostReport(normal, post, total)


@dataclass
class TimingRow:
    scenarios: int
    total_cost: float
    variables: int
    constraints: int
    iterations: int
    wall_seconds: float
    status: str = "converged"

    HEADER = ("scenarios", "total_cost", "variables", "constraints", "iterations", "wall_seconds", "status")

    def cells(self):
        return [str(self.scenarios), fmt(self.total_cost), str(self.variables), str(self.constraints),
                str(self.iterations), f"{self.wall_seconds:.2f}", self.status]


@dataclass
class SweepRow:
    capacity: float
    status: str
    costs: Optional[CostReport]
    iterations: int
    feasible: bool
    error: str = ""

    HEADER = ("capacity_mw", "status", "CG", "LC", "GC", "FL", "ESS", "total", "iterations", "feasible")

    def cells(self):
        if self.costs is None:
            vals = [""] * 6
        else:
            vals = [fmt(self.costs.part(p)) for p in PARTS] + [fmt(self.costs.total)]
        return [fmt(self.capacity), self.status, *vals, str(self.iterations), str(int(self.feasible))]


def write_table(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for r in rows:
            wr.writerow(r)
    return path


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_round_tree(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _round_tree(obj):
    if isinstance(obj, dict):
        return {str(k): _round_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_tree(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(fmt(obj)) if np.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def export_schedules(result, out_dir, families=None) -> list[Path]:
    """Per (scenario, state) tables named ``family_s{S}_k{K}.csv``.

    Scenarios are numbered from 1 and states from 0 (intact network). Rows
    are periods, columns are ``element:quantity``. Families with no elements
    produce no files. ``result`` is a solver result or a schedule.
    """
    schedule: DispatchSchedule = getattr(result, "schedule", result)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lab = schedule.labels
    K, S, T, _ = schedule.p_gen.shape
    spec = {
        "gen": [(lab["gen"], "p_mw", schedule.p_gen)],
        "soc": [(lab["ess"], "soc_mwh", schedule.soc)],
        "ess": [(lab["ess"], "ch_mw", schedule.p_ch), (lab["ess"], "dis_mw", schedule.p_dis)],
        "fl": [(lab["fl"], "inc_mw", schedule.p_inc), (lab["fl"], "dec_mw", schedule.p_dec)],
        "curtail": [(lab["bus"], "load_mw", schedule.load_curtail),
                    (lab["res"], "res_mw", schedule.res_curtail)],
    }
    if families is not None:
        spec = {k: v for k, v in spec.items() if k in families}
    written = []
    for fam, groups in spec.items():
        groups = [g for g in groups if len(g[0])]
        if not groups:
            continue
        header = ["t"] + [f"{n}:{q}" for names, q, _ in groups for n in names]
        for k in range(K):
            for s in range(S):
                rows = []
                for t in range(T):
                    cells = [str(t + 1)]
                    for _, _, arr in groups:
                        cells += [fmt(v) for v in arr[k, s, t]]
                    rows.append(cells)
                written.append(write_table(out / f"{fam}_s{s + 1}_k{k}.csv", header, rows))
    return written


def worker_count(jobs: int) -> int:
    """Workers for independent solves, capped by ``SCOPF_THREADS``."""
    cap = os.environ.get("SCOPF_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, min(n, jobs))
