"""Generic NLP container and the quadratic-row machinery used to build it.

An :class:`NlpProblem` is

    min f(x)   s.t.  c_lo <= c(x) <= c_hi,   x_lo <= x <= x_hi

where rows with ``c_lo == c_hi`` are equalities. Jacobian and Hessian are
returned on sparsity patterns fixed at construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp


@dataclass
class NlpProblem:
    n: int
    m: int
    x_lo: np.ndarray
    x_hi: np.ndarray
    c_lo: np.ndarray
    c_hi: np.ndarray
    x0: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    constraints: Callable[[np.ndarray], np.ndarray]
    jac_rows: np.ndarray
    jac_cols: np.ndarray
    jac_values: Callable[[np.ndarray], np.ndarray]
    hess_rows: np.ndarray  # lower triangle: hess_rows >= hess_cols
    hess_cols: np.ndarray
    hess_values: Callable[[np.ndarray, np.ndarray, float], np.ndarray]
    schedule: Optional[Callable[[np.ndarray], object]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.hess_rows < self.hess_cols):
            raise ValueError("Hessian pattern must be lower triangular")

    @property
    def is_equality(self) -> np.ndarray:
        return self.c_lo == self.c_hi

    def jacobian(self, x) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.jac_values(x), (self.jac_rows, self.jac_cols)), shape=(self.m, self.n)
        )

    def hessian(self, x, lam, sigma=1.0) -> sp.csr_matrix:
        """Lower triangle of ``sigma * H_f + sum(lam_i * H_ci)``."""
        return sp.csr_matrix(
            (self.hess_values(x, lam, sigma), (self.hess_rows, self.hess_cols)),
            shape=(self.n, self.n),
        )

    def export_patterns(self) -> str:
        """Coordinate lists of both sparsity patterns as plain text."""
        out = [f"# jacobian {self.m} x {self.n} nnz={len(self.jac_rows)}"]
        out += [f"{r} {c}" for r, c in zip(self.jac_rows, self.jac_cols)]
        out.append(f"# hessian {self.n} x {self.n} nnz={len(self.hess_rows)}")
        out += [f"{r} {c}" for r, c in zip(self.hess_rows, self.hess_cols)]
        return "\n".join(out) + "\n"


class QuadraticRows:
    """Rows of the form ``c_i(x) = b_i + a_i.x + sum_k v_k x[p_k] x[q_k]``.

    Jacobian values are linear in ``x`` and Hessians are constant, so both
    are evaluated by scatter-adds over precomputed slot maps.
    """

    def __init__(self, m, n, const, lin, quad):
        self.m, self.n = int(m), int(n)
        self.const = np.asarray(const, dtype=float)
        lr, lc, lv = (np.asarray(a) for a in lin)
        qr, qp, qq, qv = (np.asarray(a) for a in quad)
        self.lin = sp.csr_matrix((lv.astype(float), (lr, lc)), shape=(self.m, self.n))
        self.qr, self.qp, self.qq = qr.astype(np.int64), qp.astype(np.int64), qq.astype(np.int64)
        self.qv = qv.astype(float)

        rows = np.concatenate([lr, qr, qr]).astype(np.int64)
        cols = np.concatenate([lc, qp, qq]).astype(np.int64)
        keys, inv = np.unique(rows * self.n + cols, return_inverse=True)
        self.jac_rows, self.jac_cols = keys // self.n, keys % self.n
        self.nnz = len(keys)
        nl, nq = len(lr), len(qr)
        self._lin_slot = inv[:nl]
        self._qp_slot = inv[nl:nl + nq]
        self._qq_slot = inv[nl + nq:]
        self._lin_jac = np.bincount(self._lin_slot, lv.astype(float), self.nnz)

        self.h_rows = np.maximum(self.qp, self.qq)
        self.h_cols = np.minimum(self.qp, self.qq)
        self.h_weight = np.where(self.qp == self.qq, 2.0, 1.0) * self.qv

    def value(self, x):
        quad = np.bincount(self.qr, self.qv * x[self.qp] * x[self.qq], self.m)
        return self.const + self.lin @ x + quad

    def jac_values(self, x):
        return (
            self._lin_jac
            + np.bincount(self._qp_slot, self.qv * x[self.qq], self.nnz)
            + np.bincount(self._qq_slot, self.qv * x[self.qp], self.nnz)
        )


class RowBuilder:
    """Accumulates vectorized row definitions for :class:`QuadraticRows`."""

    def __init__(self):
        self.m = 0
        self._const = []
        self._lin = ([], [], [])
        self._quad = ([], [], [], [])
        self._lo, self._hi = [], []
        self._tags = []

    def new(self, shape, eq: str, lo, hi, **tag):
        """Allocate rows with the given shape; returns their ids."""
        shape = (int(shape),) if np.ndim(shape) == 0 else tuple(int(s) for s in shape)
        count = int(np.prod(shape))
        rows = np.arange(self.m, self.m + count).reshape(shape)
        self.m += count
        self._lo.append(np.broadcast_to(np.asarray(lo, float), shape).ravel())
        self._hi.append(np.broadcast_to(np.asarray(hi, float), shape).ravel())
        cols = {}
        for key in ("elem", "s", "t", "k"):
            cols[key] = np.broadcast_to(np.asarray(tag.get(key, -1)), shape).ravel().astype(np.int32)
        self._tags.append((eq, count, cols))
        return rows

    def lin(self, rows, cols, vals):
        r, c, v = np.broadcast_arrays(np.asarray(rows), np.asarray(cols), np.asarray(vals, float))
        self._lin[0].append(r.ravel())
        self._lin[1].append(c.ravel())
        self._lin[2].append(v.ravel())

    def quad(self, rows, p, q, vals):
        r, a, b, v = np.broadcast_arrays(
            np.asarray(rows), np.asarray(p), np.asarray(q), np.asarray(vals, float)
        )
        for store, arr in zip(self._quad, (r, a, b, v)):
            store.append(arr.ravel())

    def const(self, rows, vals):
        r, v = np.broadcast_arrays(np.asarray(rows), np.asarray(vals, float))
        self._const.append((r.ravel(), v.ravel()))

    @staticmethod
    def _cat(parts, dtype):
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype)

    def build(self, n) -> tuple[QuadraticRows, np.ndarray, np.ndarray, dict]:
        const = np.zeros(self.m)
        for r, v in self._const:
            np.add.at(const, r, v)
        lin = (
            self._cat(self._lin[0], np.int64),
            self._cat(self._lin[1], np.int64),
            self._cat(self._lin[2], float),
        )
        quad = tuple(
            self._cat(part, dt)
            for part, dt in zip(self._quad, (np.int64, np.int64, np.int64, float))
        )
        rows = QuadraticRows(self.m, n, const, lin, quad)
        lo = self._cat(self._lo, float)
        hi = self._cat(self._hi, float)
        eq_names = []
        for name, count, _ in self._tags:
            eq_names.extend([name] * count)
        tags = {"eq": np.array(eq_names, dtype=object)}
        for key in ("elem", "s", "t", "k"):
            tags[key] = self._cat([c[key] for _, _, c in self._tags], np.int32)
        return rows, lo, hi, tags


def merged_hessian(parts):
    """Union pattern of several quadratic sources.

    ``parts`` is a list of ``(h_rows, h_cols)``; returns ``(rows, cols,
    slots)`` with one slot array per part.
    """
    all_r = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0, np.int64)
    all_c = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, np.int64)
    n = int(max(all_r.max(initial=0), all_c.max(initial=0))) + 1
    keys, inv = np.unique(all_r.astype(np.int64) * n + all_c, return_inverse=True)
    slots, start = [], 0
    for r, _ in parts:
        slots.append(inv[start:start + len(r)])
        start += len(r)
    return keys // n, keys % n, slots


def qcqp_problem(objective: QuadraticRows, cons: QuadraticRows, x_lo, x_hi, c_lo, c_hi, x0, **kw):
    """Wrap a one-row quadratic objective and quadratic constraint rows."""
    n = cons.n
    h_r, h_c, (s_obj, s_con) = merged_hessian(
        [(objective.h_rows, objective.h_cols), (cons.h_rows, cons.h_cols)]
    )
    nnz_h = len(h_r)
    obj_h = np.bincount(s_obj, objective.h_weight, nnz_h)

    def objective_fn(x):
        return float(objective.value(x)[0])

    def gradient_fn(x):
        g = np.zeros(n)
        np.add.at(g, objective.jac_cols, objective.jac_values(x))
        return g

    def hess_fn(x, lam, sigma=1.0):
        vals = sigma * obj_h
        if len(lam):
            vals += np.bincount(s_con, cons.h_weight * np.asarray(lam)[cons.qr], nnz_h)
        return vals

    return NlpProblem(
        n=n,
        m=cons.m,
        x_lo=np.asarray(x_lo, float),
        x_hi=np.asarray(x_hi, float),
        c_lo=np.asarray(c_lo, float),
        c_hi=np.asarray(c_hi, float),
        x0=np.asarray(x0, float),
        objective=objective_fn,
        gradient=gradient_fn,
        constraints=cons.value,
        jac_rows=cons.jac_rows,
        jac_cols=cons.jac_cols,
        jac_values=cons.jac_values,
        hess_rows=h_r,
        hess_cols=h_c,
        hess_values=hess_fn,
        **kw,
    )
