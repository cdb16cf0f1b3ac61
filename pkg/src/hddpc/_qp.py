"""Incremental assembly of sparse QPs from named variable blocks."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .qpsolver import QpProblem


def _triplets(M):
    """``(rows, cols, values, shape)`` of a dense or sparse matrix."""
    if sp.issparse(M):
        M = M.tocoo()
        return M.row, M.col, M.data, M.shape
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("constraint blocks must be 2-D")
    r, c = np.nonzero(M)
    return r, c, M[r, c], M.shape


class QpBuilder:
    """Collects variable blocks, constraint rows and quadratic costs.

    Constraint rows are written as ``lo <= sum_b M_b x_b <= hi`` with one
    coefficient matrix per named block; costs as ``(x_b - r)' W (x_b - r)``,
    which lands in the solver's ``1/2 x' P x`` convention as ``P = 2 W``.
    """

    def __init__(self):
        self.layout: dict[str, slice] = {}
        self.n = 0
        self._rows: list[tuple[dict, np.ndarray, np.ndarray]] = []
        self._m = 0
        self._P_diag: list[tuple[slice, np.ndarray]] = []
        self._q = []
        self.row_blocks: dict[str, slice] = {}

    def var(self, name: str, size: int) -> slice:
        if name in self.layout:
            raise KeyError(f"duplicate variable block {name!r}")
        sl = slice(self.n, self.n + int(size))
        self.layout[name] = sl
        self.n += int(size)
        return sl

    def size(self, name: str) -> int:
        sl = self.layout[name]
        return sl.stop - sl.start

    def rows(self, label: str, terms: dict, lo, hi=None) -> slice:
        """Add rows ``lo <= sum M x <= hi`` (``hi = lo`` gives equalities)."""
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        m = None
        mats = {}
        for name, M in terms.items():
            M = _triplets(M)
            if M[3][1] != self.size(name):
                raise ValueError(f"{label}: block {name!r} needs {self.size(name)} columns, got {M[3][1]}")
            if m is not None and M[3][0] != m:
                raise ValueError(f"{label}: inconsistent row counts")
            m = M[3][0]
            mats[name] = M
        if m is None:
            raise ValueError(f"{label}: no terms")
        lo = np.broadcast_to(lo, (m,)).astype(float)
        hi = lo.copy() if hi is None else np.broadcast_to(np.asarray(hi, dtype=float), (m,)).astype(float)
        self._rows.append((mats, lo, hi))
        sl = slice(self._m, self._m + m)
        self.row_blocks[label] = sl
        self._m += m
        return sl

    def box(self, label: str, name: str, lo, hi) -> slice:
        k = self.size(name)
        return self.rows(label, {name: sp.identity(k)}, lo, hi)

    def cost(self, name: str, weights, ref=None):
        """Add ``sum_i w_i (x_i - r_i)^2`` over block ``name`` (diagonal weights)."""
        k = self.size(name)
        w = np.broadcast_to(np.asarray(weights, dtype=float), (k,)).astype(float)
        self._P_diag.append((self.layout[name], 2.0 * w))
        if ref is not None:
            r = np.broadcast_to(np.asarray(ref, dtype=float), (k,))
            self._q.append((self.layout[name], -2.0 * w * r))

    def build(self, check_psd=True) -> QpProblem:
        n = self.n
        diag = np.zeros(n)
        for sl, w in self._P_diag:
            diag[sl] += w
        q = np.zeros(n)
        for sl, v in self._q:
            q[sl] += v
        ri, ci, vals = [], [], []
        offset = 0
        l_parts, u_parts = [], []
        for mats, lo, hi in self._rows:
            for name, (r, c, v, _) in mats.items():
                ri.append(r + offset)
                ci.append(c + self.layout[name].start)
                vals.append(v)
            offset += lo.size
            l_parts.append(lo)
            u_parts.append(hi)
        if ri:
            A = sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(ri), np.concatenate(ci))), shape=(offset, n)
            )
            l, u = np.concatenate(l_parts), np.concatenate(u_parts)
        else:
            A, l, u = sp.csc_matrix((0, n)), np.zeros(0), np.zeros(0)
        names = []
        for name, sl in self.layout.items():
            names.extend(f"{name}[{i}]" for i in range(sl.stop - sl.start))
        return QpProblem(
            sp.diags(diag, format="csc"), q, A, l, u, names, check_psd,
            dict(self.layout), dict(self.row_blocks),
        )
