"""Sparse convex QP solver (operator splitting / ADMM).

Solves::

    minimize    1/2 x' P x + q' x
    subject to  l <= A x <= u

with the ADMM iteration of Stellato et al. (OSQP): a quasi-definite KKT
system is factored once per penalty value, Ruiz equilibration conditions the
data, the penalty ``rho`` adapts to the residual balance, and an optional
polish step solves the equality-constrained problem on the guessed active
set. A polished point is only accepted when it passes the KKT checks
(feasibility, stationarity, dual signs), so the returned solution is
certified to the tolerances reported alongside it.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidProblem

log = logging.getLogger(__name__)

INF = np.inf
RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_EQ_SCALE = 1e3
EQ_TOL = 1e-10
SCALING_MIN, SCALING_MAX = 1e-4, 1e4


class Status(str, enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    PRIMAL_INFEASIBLE = "primal_infeasible"
    DUAL_INFEASIBLE = "dual_infeasible"


@dataclass
class QpProblem:
    """Convex QP data. ``P`` must be symmetric positive semidefinite.

    Bounds may be infinite; equalities are rows with ``l == u``. Problems with
    ``l > u`` somewhere are accepted here and reported as primal infeasible by
    :func:`solve`, so callers can surface contradictory boxes without crashing.
    """

    P: sp.spmatrix | np.ndarray
    q: np.ndarray
    A: sp.spmatrix | np.ndarray
    l: np.ndarray
    u: np.ndarray
    variable_names: Sequence[str] | None = None
    check_psd: bool = True
    # Optional map from block name to slice of x, filled by problem builders.
    layout: dict | None = field(default=None, repr=False)
    row_blocks: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.P = sp.csc_matrix(self.P, dtype=float)
        self.A = sp.csc_matrix(self.A, dtype=float)
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        self.l = np.asarray(self.l, dtype=float).reshape(-1)
        self.u = np.asarray(self.u, dtype=float).reshape(-1)
        n = self.q.size
        if self.P.shape != (n, n):
            raise InvalidProblem(f"P has shape {self.P.shape}, expected {(n, n)}")
        m = self.A.shape[0]
        if self.A.shape[1] != n:
            raise InvalidProblem(f"A has {self.A.shape[1]} columns, expected {n}")
        if self.l.size != m or self.u.size != m:
            raise InvalidProblem("l and u must have one entry per row of A")
        if self.variable_names is not None and len(self.variable_names) != n:
            raise InvalidProblem("variable_names must label every variable")
        if np.any(np.isnan(self.l)) or np.any(np.isnan(self.u)) or not np.all(np.isfinite(self.q)):
            raise InvalidProblem("NaN in problem data")
        asym = abs(self.P - self.P.T)
        if asym.nnz and asym.max() > 1e-9 * max(1.0, abs(self.P).max()):
            raise InvalidProblem("P is not symmetric")
        if self.check_psd and not _is_psd(self.P):
            raise InvalidProblem("P is not positive semidefinite")

    @property
    def n(self) -> int:
        return self.q.size

    @property
    def m(self) -> int:
        return self.l.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.P @ x) + self.q @ x)


def _is_psd(P: sp.csc_matrix) -> bool:
    n = P.shape[0]
    if n == 0:
        return True
    offdiag = P - sp.diags(P.diagonal())
    if offdiag.nnz == 0 or not offdiag.count_nonzero():
        return bool(np.all(P.diagonal() >= 0))
    dense = P.toarray()
    eps = 1e-9 * max(1.0, np.abs(dense).max())
    try:
        np.linalg.cholesky(dense + eps * np.eye(n))
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class SolverSettings:
    eps_abs: float = 1e-6
    eps_rel: float = 1e-6
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    alpha: float = 1.6
    polish: bool = True
    scaling_iters: int = 10
    adaptive_rho: bool = True
    adaptive_rho_interval: int = 50
    check_interval: int = 10
    eps_prim_inf: float = 1e-7
    eps_dual_inf: float = 1e-7
    polish_refine_iters: int = 5
    # A polished point must satisfy the optimality conditions to this
    # (absolute and relative) tolerance, however loose eps_abs/eps_rel are.
    polish_tol: float = 1e-9
    # Wall-clock cap in seconds; None keeps the solve deterministic.
    time_limit: float | None = None


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: Status
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    polished: bool = False
    rho_updates: int = 0
    solve_time: float = field(default=0.0, compare=False)

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED


def _col_inf_norms(M: sp.csc_matrix) -> np.ndarray:
    out = np.zeros(M.shape[1])
    if M.nnz:
        counts = np.diff(M.indptr)
        nz = counts > 0
        out[nz] = np.maximum.reduceat(np.abs(M.data), M.indptr[:-1][nz])
    return out


def _row_inf_norms(M: sp.csc_matrix) -> np.ndarray:
    out = np.zeros(M.shape[0])
    if M.nnz:
        np.maximum.at(out, M.indices, np.abs(M.data))
    return out


def _limit_scaling(v: np.ndarray) -> np.ndarray:
    v = v.copy()
    v[v < SCALING_MIN] = 1.0
    return np.minimum(v, SCALING_MAX)


def _csc_col_index(M: sp.csc_matrix) -> np.ndarray:
    return np.repeat(np.arange(M.shape[1]), np.diff(M.indptr))


class _Scaled:
    """Ruiz-equilibrated copy of the problem: ``x = D xs``, ``y = E ys / c``."""

    def __init__(self, prob: QpProblem, iters: int):
        n, m = prob.n, prob.m
        P, A, q = prob.P.copy(), prob.A.copy(), prob.q.copy()
        P.sort_indices()
        A.sort_indices()
        P_col, A_col = _csc_col_index(P), _csc_col_index(A)
        D, E, c = np.ones(n), np.ones(m), 1.0
        # Scale the raw CSC arrays in place; the sparsity pattern never changes.
        for _ in range(iters):
            col = np.maximum(_col_inf_norms(P), _col_inf_norms(A))
            dD = 1.0 / np.sqrt(_limit_scaling(col))
            dE = 1.0 / np.sqrt(_limit_scaling(_row_inf_norms(A))) if m else np.ones(0)
            P.data *= dD[P.indices] * dD[P_col]
            A.data *= dE[A.indices] * dD[A_col]
            q = dD * q
            D *= dD
            E *= dE
            mean_col = float(np.mean(_col_inf_norms(P))) if n else 1.0
            qn = float(np.max(np.abs(q))) if n else 1.0
            cost = _limit_scaling(np.array([max(mean_col, qn)]))[0]
            P.data /= cost
            q = q / cost
            c /= cost
        self.P, self.A, self.q = P, A, q
        self.D, self.E, self.c = D, E, c
        with np.errstate(invalid="ignore"):
            self.l = E * prob.l
            self.u = E * prob.u

    def unscale_x(self, xs):
        return self.D * xs

    def unscale_y(self, ys):
        return self.E * ys / self.c

    def scale_x(self, x):
        return x / self.D

    def scale_y(self, y):
        return self.c * y / self.E


def _rho_vector(l, u, rho):
    r = np.full(l.size, rho)
    loose = np.isinf(l) & np.isinf(u)
    eq = np.abs(u - l) < EQ_TOL
    r[loose] = RHO_MIN
    r[eq] = min(RHO_EQ_SCALE * rho, RHO_MAX)
    return r


def _factor_kkt(P, A, sigma, rho_vec):
    n = P.shape[0]
    K = sp.bmat(
        [[P + sigma * sp.eye(n), A.T], [A, -sp.diags(1.0 / rho_vec)]], format="csc"
    )
    # The ADMM matrix is quasi-definite, so any symmetric ordering factors
    # stably without pivoting; minimum degree on A + A' keeps the fill small.
    return spla.splu(
        K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options={"SymmetricMode": True}
    )


def _residuals(prob: QpProblem, x, y, z):
    Ax = prob.A @ x
    Px = prob.P @ x
    Aty = prob.A.T @ y
    r_prim = float(np.max(np.abs(Ax - z))) if prob.m else 0.0
    r_dual = float(np.max(np.abs(Px + prob.q + Aty))) if prob.n else 0.0
    prim_scale = max(_inf(Ax), _inf(z))
    dual_scale = max(_inf(Px), _inf(Aty), _inf(prob.q))
    return r_prim, r_dual, prim_scale, dual_scale


def _inf(v) -> float:
    return float(np.max(np.abs(v))) if v.size else 0.0


def _dual_sign_ok(prob: QpProblem, Ax, y, tol) -> bool:
    # y > 0 only on rows at their upper bound, y < 0 only at the lower bound.
    gap_u = np.where(np.isfinite(prob.u), prob.u - Ax, INF)
    gap_l = np.where(np.isfinite(prob.l), Ax - prob.l, INF)
    bad_pos = (y > tol) & (gap_u > tol * 10 + 1e-9)
    bad_neg = (y < -tol) & (gap_l > tol * 10 + 1e-9)
    return not (np.any(bad_pos) or np.any(bad_neg))


def _certify(prob, x, y, settings):
    """Residuals of a candidate point in the original problem and whether it passes."""
    Ax = prob.A @ x
    z = np.clip(Ax, prob.l, prob.u)
    r_prim, r_dual, ps, ds = _residuals(prob, x, y, z)
    tol = min(settings.polish_tol, settings.eps_abs, settings.eps_rel)
    eps_p = tol * (1.0 + ps)
    eps_d = tol * (1.0 + ds)
    ok = r_prim <= eps_p and r_dual <= eps_d and _dual_sign_ok(prob, Ax, y, max(eps_d, 1e-9))
    return ok, r_prim, r_dual


def _polish(prob: QpProblem, sc: _Scaled, xs, zs, ys, settings):
    """Solve the KKT system restricted to the active set guessed from ADMM."""
    l, u = sc.l, sc.u
    eq = np.abs(u - l) < EQ_TOL
    low = ((zs - l) < -ys) | eq
    up = ((u - zs) < ys) & ~low
    act = np.flatnonzero(low | up)
    target = np.where(low[act], l[act], u[act])
    n = sc.P.shape[0]
    A_act = sc.A[act]
    delta = 1e-9
    K_reg = sp.bmat(
        [[sc.P + delta * sp.eye(n), A_act.T], [A_act, -delta * sp.eye(act.size)]], format="csc"
    )
    K = sp.bmat([[sc.P, A_act.T], [A_act, None]], format="csc") if act.size else sc.P.tocsc()
    rhs = np.concatenate([-sc.q, target])
    try:
        lu = spla.splu(K_reg, permc_spec="COLAMD")
    except RuntimeError:
        return None
    sol = lu.solve(rhs)
    for _ in range(settings.polish_refine_iters):
        sol = sol + lu.solve(rhs - K @ sol)
    if not np.all(np.isfinite(sol)):
        return None
    x_pol = sc.unscale_x(sol[:n])
    ys_full = np.zeros(sc.A.shape[0])
    ys_full[act] = sol[n:]
    y_pol = sc.unscale_y(ys_full)
    ok, r_prim, r_dual = _certify(prob, x_pol, y_pol, settings)
    return ok, x_pol, y_pol, r_prim, r_dual


def _infeasibility(prob, sc, dx, dy, settings):
    """Check the OSQP infeasibility certificates on the last iterate differences."""
    D, E = sc.D, sc.E
    dy_u = E * dy  # proportional to the unscaled dual difference
    dy_norm = _inf(dy_u)
    if dy_norm > settings.eps_prim_inf:
        Atdy = _inf((sc.A.T @ dy) / D)
        finite_u = np.isfinite(prob.u)
        finite_l = np.isfinite(prob.l)
        if (
            Atdy <= settings.eps_prim_inf * dy_norm
            and not np.any(dy_u[~finite_u] > settings.eps_prim_inf * dy_norm)
            and not np.any(dy_u[~finite_l] < -settings.eps_prim_inf * dy_norm)
        ):
            support = np.sum(prob.u[finite_u] * np.maximum(dy_u[finite_u], 0.0)) + np.sum(
                prob.l[finite_l] * np.minimum(dy_u[finite_l], 0.0)
            )
            if support < -settings.eps_prim_inf * dy_norm:
                return Status.PRIMAL_INFEASIBLE
    dx_u = D * dx
    dx_norm = _inf(dx_u)
    if dx_norm > settings.eps_dual_inf:
        tol = settings.eps_dual_inf * dx_norm
        Pdx = _inf(prob.P @ dx_u)
        qdx = float(prob.q @ dx_u)
        if Pdx <= tol and qdx < -tol:
            Adx = prob.A @ dx_u
            lo_ok = np.where(np.isfinite(prob.l), Adx >= -tol, True)
            hi_ok = np.where(np.isfinite(prob.u), Adx <= tol, True)
            if np.all(lo_ok & hi_ok):
                return Status.DUAL_INFEASIBLE
    return None


def solve(
    problem: QpProblem,
    settings: SolverSettings | None = None,
    warm_start: tuple[np.ndarray, np.ndarray] | None = None,
) -> QpSolution:
    """Solve ``problem``; never raises on infeasible data, reports a status instead.

    Args:
        problem: The QP.
        settings: Solver settings; defaults to :class:`SolverSettings()`.
        warm_start: Optional ``(x, y)`` from a previous, similar solve.
    """
    settings = settings or SolverSettings()
    t_start = time.perf_counter()
    prob = problem
    n, m = prob.n, prob.m

    if m and np.any(prob.l > prob.u):
        gap = float(np.max(prob.l - prob.u))
        return QpSolution(
            np.zeros(n), np.zeros(m), Status.PRIMAL_INFEASIBLE, 0, gap, 0.0, np.nan,
            solve_time=time.perf_counter() - t_start,
        )

    sc = _Scaled(prob, settings.scaling_iters)
    rho = settings.rho
    rho_vec = _rho_vector(sc.l, sc.u, rho)
    kkt = _factor_kkt(sc.P, sc.A, settings.sigma, rho_vec)

    if warm_start is not None:
        xs = sc.scale_x(np.asarray(warm_start[0], dtype=float))
        ys = sc.scale_y(np.asarray(warm_start[1], dtype=float))
        zs = np.clip(sc.A @ xs, sc.l, sc.u)
    else:
        xs, ys, zs = np.zeros(n), np.zeros(m), np.zeros(m)
        zs = np.clip(zs, sc.l, sc.u)

    a, sigma = settings.alpha, settings.sigma
    status = Status.MAX_ITER
    rho_updates = 0
    it = 0
    r_prim = r_dual = np.inf
    x_prev, y_prev = xs.copy(), ys.copy()
    for it in range(1, settings.max_iter + 1):
        x_prev, y_prev = xs, ys
        rhs = np.concatenate([sigma * xs - sc.q, zs - ys / rho_vec])
        sol = kkt.solve(rhs)
        xt = sol[:n]
        zt = zs + (sol[n:] - ys) / rho_vec
        xs = a * xt + (1 - a) * xs
        zr = a * zt + (1 - a) * zs
        z_new = np.clip(zr + ys / rho_vec, sc.l, sc.u)
        ys = ys + rho_vec * (zr - z_new)
        zs = z_new

        if it % settings.check_interval and it != settings.max_iter:
            continue
        x = sc.unscale_x(xs)
        y = sc.unscale_y(ys)
        z = zs / sc.E if m else zs
        r_prim, r_dual, ps, ds = _residuals(prob, x, y, z)
        eps_p = settings.eps_abs + settings.eps_rel * ps
        eps_d = settings.eps_abs + settings.eps_rel * ds
        if r_prim <= eps_p and r_dual <= eps_d:
            status = Status.SOLVED
            break
        cert = _infeasibility(prob, sc, xs - x_prev, ys - y_prev, settings)
        if cert is not None:
            status = cert
            break
        if settings.time_limit is not None and time.perf_counter() - t_start > settings.time_limit:
            break
        if settings.adaptive_rho and it % settings.adaptive_rho_interval == 0:
            Axs = sc.A @ xs
            prim_n = _inf(Axs - zs) / max(_inf(Axs), _inf(zs), 1e-10)
            dual_n = _inf(sc.P @ xs + sc.q + sc.A.T @ ys) / max(
                _inf(sc.P @ xs), _inf(sc.A.T @ ys), _inf(sc.q), 1e-10
            )
            new_rho = float(np.clip(rho * np.sqrt(prim_n / max(dual_n, 1e-10)), RHO_MIN, RHO_MAX))
            if new_rho > 5 * rho or new_rho < rho / 5:
                rho = new_rho
                rho_vec = _rho_vector(sc.l, sc.u, rho)
                kkt = _factor_kkt(sc.P, sc.A, sigma, rho_vec)
                rho_updates += 1

    x = sc.unscale_x(xs)
    y = sc.unscale_y(ys)
    polished = False
    if settings.polish and status in (Status.SOLVED, Status.MAX_ITER):
        res = _polish(prob, sc, xs, zs, ys, settings)
        if res is not None and res[0]:
            _, x, y, r_prim, r_dual = res
            status = Status.SOLVED
            polished = True
    if status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE):
        objective = np.nan
    else:
        objective = prob.objective(x)
        if not polished:
            z = np.clip(prob.A @ x, prob.l, prob.u)
            r_prim, r_dual, _, _ = _residuals(prob, x, y, z)
    return QpSolution(
        x=x,
        y=y,
        status=status,
        iterations=it,
        primal_residual=float(r_prim),
        dual_residual=float(r_dual),
        objective=objective,
        polished=polished,
        rho_updates=rho_updates,
        solve_time=time.perf_counter() - t_start,
    )


def dual_objective(problem: QpProblem, x: np.ndarray, y: np.ndarray) -> float:
    """Lagrange dual value ``-1/2 x'Px - sum(u y+ + l y-)`` at a stationary pair."""
    yp, yn = np.maximum(y, 0.0), np.minimum(y, 0.0)
    with np.errstate(invalid="ignore"):
        support = np.where(yp > 0, problem.u * yp, 0.0).sum() + np.where(yn < 0, problem.l * yn, 0.0).sum()
    return float(-0.5 * x @ (problem.P @ x) - support)


def dump_problem(problem: QpProblem, path: str | Path) -> None:
    """Write ``P`` and ``A`` as matrix-market files and ``q``, ``l``, ``u`` as text."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scipy.io.mmwrite(str(path.with_suffix(".P.mtx")), sp.coo_matrix(problem.P))
    scipy.io.mmwrite(str(path.with_suffix(".A.mtx")), sp.coo_matrix(problem.A))
    for name in ("q", "l", "u"):
        np.savetxt(path.with_suffix(f".{name}.txt"), getattr(problem, name), fmt="%.17g")
