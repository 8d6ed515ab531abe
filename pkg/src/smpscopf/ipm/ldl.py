"""Sparse LDL^T factorization of symmetric quasi-definite and indefinite
matrices without pivoting.

The symbolic phase (fill-reducing ordering, elimination tree, column counts)
runs once per sparsity pattern; the numeric phase is repeated for every new
set of values. Inertia follows from the signs of ``D`` (Sylvester's law).
The kernels follow the up-looking scheme used by QDLDL.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp


class FactorizationError(RuntimeError):
    pass


@numba.njit(cache=True)
def _etree(n, Ap, Ai):
    work = np.zeros(n, np.int64)
    Lnz = np.zeros(n, np.int64)
    parent = np.full(n, -1, np.int64)
    for j in range(n):
        work[j] = j
        for p in range(Ap[j], Ap[j + 1]):
            i = Ai[p]
            if i > j:
                return parent, Lnz, -1
            while work[i] != j:
                if parent[i] == -1:
                    parent[i] = j
                Lnz[i] += 1
                work[i] = j
                i = parent[i]
    return parent, Lnz, 0


@numba.njit(cache=True)
def _factor(n, Ap, Ai, Ax, Lp, Li, Lx, D, parent, pivot_tol):
    """Numeric factorization; returns (n_pos, n_neg, n_zero)."""
    y_mark = np.zeros(n, np.bool_)
    y_vals = np.zeros(n)
    y_idx = np.zeros(n, np.int64)
    buf = np.zeros(n, np.int64)
    nxt = Lp[:-1].copy()
    n_pos = 0
    n_neg = 0
    n_zero = 0
    for k in range(n):
        D[k] = 0.0
        nnz_y = 0
        for p in range(Ap[k], Ap[k + 1]):
            b = Ai[p]
            if b == k:
                D[k] += Ax[p]
                continue
            y_vals[b] += Ax[p]
            if not y_mark[b]:
                y_mark[b] = True
                buf[0] = b
                ne = 1
                i = parent[b]
                while i != -1 and i < k:
                    if y_mark[i]:
                        break
                    y_mark[i] = True
                    buf[ne] = i
                    ne += 1
                    i = parent[i]
                while ne > 0:
                    ne -= 1
                    y_idx[nnz_y] = buf[ne]
                    nnz_y += 1
        for q in range(nnz_y - 1, -1, -1):
            c = y_idx[q]
            end = nxt[c]
            yc = y_vals[c]
            for j in range(Lp[c], end):
                y_vals[Li[j]] -= Lx[j] * yc
            Li[end] = k
            lval = yc / D[c]
            Lx[end] = lval
            D[k] -= yc * lval
            nxt[c] = end + 1
            y_vals[c] = 0.0
            y_mark[c] = False
        if abs(D[k]) <= pivot_tol or not np.isfinite(D[k]):
            n_zero += 1
            # keep going with a tiny pivot so the caller gets a full count
            D[k] = pivot_tol if D[k] >= 0 else -pivot_tol
            if D[k] == 0.0:
                D[k] = 1e-300
        elif D[k] > 0:
            n_pos += 1
        else:
            n_neg += 1
    return n_pos, n_neg, n_zero


@numba.njit(cache=True)
def _solve(n, Lp, Li, Lx, D, x):
    for i in range(n):
        xi = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            x[Li[j]] -= Lx[j] * xi
    for i in range(n):
        x[i] /= D[i]
    for i in range(n - 1, -1, -1):
        s = x[i]
        for j in range(Lp[i], Lp[i + 1]):
            s -= Lx[j] * x[Li[j]]
        x[i] = s


def amd_order(rows, cols, n) -> np.ndarray:
    """Approximate minimum degree ordering of a symmetric pattern."""
    from cvxopt import amd, spmatrix

    r = np.concatenate([rows, cols, np.arange(n)])
    c = np.concatenate([cols, rows, np.arange(n)])
    lower = r >= c
    A = spmatrix(1.0, r[lower].tolist(), c[lower].tolist(), (n, n))
    amd.options["AMD_AGGRESSIVE"] = 1
    perm = np.array(list(amd.order(A, "L")), dtype=np.int64)
    return perm


@dataclass
class Inertia:
    positive: int
    negative: int
    zero: int

    def as_tuple(self):
        return (self.positive, self.negative, self.zero)


class SymbolicLDL:
    """Symbolic analysis of a symmetric pattern given as coordinate lists
    (either triangle; duplicates allowed). ``slots`` maps every input entry
    to its position in the permuted upper-triangular CSC value array."""

    def __init__(self, rows, cols, n, perm=None):
        rows = np.asarray(rows, np.int64)
        cols = np.asarray(cols, np.int64)
        self.n = int(n)
        if perm is None:
            perm = amd_order(rows, cols, self.n)
        self.perm = np.asarray(perm, np.int64)
        self.pinv = np.empty(self.n, np.int64)
        self.pinv[self.perm] = np.arange(self.n)

        # every diagonal entry is always present
        r = np.concatenate([rows, np.arange(self.n)])
        c = np.concatenate([cols, np.arange(self.n)])
        pr, pc = self.pinv[r], self.pinv[c]
        ur, uc = np.minimum(pr, pc), np.maximum(pr, pc)
        keys, inv = np.unique(uc * self.n + ur, return_inverse=True)
        self.Ai = keys % self.n
        col = keys // self.n
        self.Ap = np.zeros(self.n + 1, np.int64)
        np.add.at(self.Ap, col + 1, 1)
        self.Ap = np.cumsum(self.Ap)
        self.nnz = len(keys)
        self.slots = inv[: len(rows)]
        self.diag_slots = inv[len(rows):]

        self.parent, Lnz, status = _etree(self.n, self.Ap, self.Ai)
        if status < 0:
            raise FactorizationError("pattern is not upper triangular")
        self.Lp = np.concatenate([[0], np.cumsum(Lnz)]).astype(np.int64)
        self.Lnz = int(self.Lp[-1])

    def values(self, vals, diag=None) -> np.ndarray:
        """Scatter coordinate values (and optional diagonal shifts)."""
        Ax = np.bincount(self.slots, vals, self.nnz).astype(float)
        if diag is not None:
            Ax += np.bincount(self.diag_slots, np.broadcast_to(np.asarray(diag, float), (self.n,)), self.nnz)
        return Ax

    def factor(self, Ax, pivot_tol=1e-20) -> "NumericLDL":
        if len(Ax) != self.nnz:
            raise FactorizationError("value array does not match the symbolic pattern")
        if not np.all(np.isfinite(Ax)):
            raise FactorizationError("non-finite matrix entries")
        Li = np.zeros(self.Lnz, np.int64)
        Lx = np.zeros(self.Lnz)
        D = np.zeros(self.n)
        scale = float(np.abs(Ax).max(initial=1.0))
        npos, nneg, nzero = _factor(
            self.n, self.Ap, self.Ai, np.asarray(Ax, float), self.Lp, Li, Lx, D,
            self.parent, pivot_tol * max(scale, 1.0),
        )
        return NumericLDL(self, Li, Lx, D, Inertia(int(npos), int(nneg), int(nzero)))


class NumericLDL:
    def __init__(self, sym: SymbolicLDL, Li, Lx, D, inertia: Inertia):
        self.sym, self.Li, self.Lx, self.D, self.inertia = sym, Li, Lx, D, inertia

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, float)
        y = b[self.sym.perm].copy()
        _solve(self.sym.n, self.sym.Lp, self.Li, self.Lx, self.D, y)
        x = np.empty_like(y)
        x[self.sym.perm] = y
        return x


def factorize(matrix, perm=None, pivot_tol=1e-14) -> NumericLDL:
    """Factor a symmetric sparse matrix (full or one triangle stored)."""
    A = sp.coo_matrix(matrix)
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    # one triangle suffices; prefer the lower one when present
    mask = A.row >= A.col if np.any(A.row > A.col) else np.ones(A.nnz, bool)
    rows, cols, vals = A.row[mask], A.col[mask], A.data[mask]
    sym = SymbolicLDL(rows, cols, A.shape[0], perm)
    return sym.factor(sym.values(vals), pivot_tol)
