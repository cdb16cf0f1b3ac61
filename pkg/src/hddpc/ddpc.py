"""Single-domain data-driven predictive control and an exact LTI test bed.

The controller replaces a state-space model by the span of recorded
trajectories: a future input/output pair is admissible when, stacked under
the most recent ``T_ini`` samples, it is (up to a slack ``sigma``) a linear
combination ``H gamma`` of the Hankel columns.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._qp import QpBuilder
from .errors import ShapeMismatch, SolverFailed
from .hankel import HankelMatrix
from .qpsolver import QpProblem, QpSolution, SolverSettings, solve


@dataclass(frozen=True)
class LtiSystem:
    """``x+ = A x + B u``, ``y = M x + D u``."""

    A: np.ndarray
    B: np.ndarray
    M: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A, B, M, D = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (self.A, self.B, self.M, self.D))
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or M.shape[1] != n:
            raise ShapeMismatch("A, B, M dimensions are inconsistent")
        if D.shape != (M.shape[0], B.shape[1]):
            raise ShapeMismatch(f"D must be {(M.shape[0], B.shape[1])}, got {D.shape}")
        for name, val in zip("ABMD", (A, B, M, D)):
            object.__setattr__(self, name, val)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.B.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.M.shape[0]


def simulate_lti(sys: LtiSystem, x0, inputs) -> np.ndarray:
    """Outputs ``y_0 .. y_{T-1}`` for inputs of shape ``(T, kappa)``."""
    x = np.asarray(x0, dtype=float).reshape(-1)
    U = np.asarray(inputs, dtype=float)
    if U.ndim == 1:
        U = U[:, None]
    if x.size != sys.n_states or U.shape[1] != sys.n_inputs:
        raise ShapeMismatch("initial state or inputs do not match the system dimensions")
    Y = np.empty((U.shape[0], sys.n_outputs))
    for k, u in enumerate(U):
        Y[k] = sys.M @ x + sys.D @ u
        x = sys.A @ x + sys.B @ u
    return Y


def lti_state_after(sys: LtiSystem, x0, inputs) -> np.ndarray:
    x = np.asarray(x0, dtype=float).reshape(-1)
    for u in np.atleast_2d(np.asarray(inputs, dtype=float)):
        x = sys.A @ x + sys.B @ u
    return x


def random_lti(rng: np.random.Generator, n_states=3, n_inputs=1, n_outputs=1, radius=0.9) -> LtiSystem:
    """Random stable system with spectral radius ``radius`` and unit-norm B, M, D."""
    A = rng.standard_normal((n_states, n_states))
    A *= radius / max(np.max(np.abs(np.linalg.eigvals(A))), 1e-12)
    B, M, D = (
        rng.standard_normal(shape)
        for shape in ((n_states, n_inputs), (n_outputs, n_states), (n_outputs, n_inputs))
    )
    return LtiSystem(A, B / np.linalg.norm(B, 2), M / np.linalg.norm(M, 2), D / np.linalg.norm(D, 2))


def _weights(W, dim: int, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.ndim == 0:
        return np.full(dim, float(W))
    if W.ndim == 1:
        if W.size != dim:
            raise ShapeMismatch(f"{name} needs {dim} entries")
        return W
    if W.shape != (dim, dim) or np.any(W - np.diag(np.diag(W))):
        raise ShapeMismatch(f"{name} must be a diagonal {dim}x{dim} matrix")
    return np.diag(W).copy()


@dataclass
class DdpcConfig:
    T_ini: int
    N: int
    Q: np.ndarray | float = 1.0
    R: np.ndarray | float = 0.0
    psi_gamma: float = 1e-2
    psi_sigma: float = 1e4
    u_min: np.ndarray | float | None = None
    u_max: np.ndarray | float | None = None

    def __post_init__(self):
        if self.psi_gamma < 0 or self.psi_sigma < 0:
            raise ValueError("psi_gamma and psi_sigma must be nonnegative")
        if self.T_ini < 0 or self.N < 1:
            raise ValueError("need T_ini >= 0 and N >= 1")


class DdpcPlan(NamedTuple):
    mu: np.ndarray
    eta: np.ndarray
    gamma: np.ndarray
    sigma: np.ndarray
    sigma_norm: float
    gamma_norm: float
    solution: QpSolution


def ddpc_assemble(hankels, history, refs, config: DdpcConfig) -> QpProblem:
    """Build the single-domain DDPC program.

    Args:
        hankels: ``(U_p, U_f, Y_p, Y_f)`` as returned by ``partition``.
        history: ``(mu_ini, eta_ini)`` with ``T_ini`` rows each.
        refs: ``(r_mu, r_eta)`` with ``N`` rows each (``None`` means zero).
        config: Horizon, weights and input bounds.

    Variables are ``(gamma, sigma, mu, eta)`` in that order, with
    ``sigma`` covering the stacked ``(mu_ini, mu, eta_ini, eta)`` rows.
    """
    U_p, U_f, Y_p, Y_f = (h.data if isinstance(h, HankelMatrix) else np.asarray(h, dtype=float) for h in hankels)
    T_ini, N = config.T_ini, config.N
    cols = {U_p.shape[1], U_f.shape[1], Y_p.shape[1], Y_f.shape[1]}
    if len(cols) != 1:
        raise ShapeMismatch("Hankel blocks need equal column counts")
    n_cols = cols.pop()
    if U_f.shape[0] % N or Y_f.shape[0] % N:
        raise ShapeMismatch("future blocks are not a multiple of N rows")
    kappa, nu = U_f.shape[0] // N, Y_f.shape[0] // N
    if U_p.shape[0] != kappa * T_ini or Y_p.shape[0] != nu * T_ini:
        raise ShapeMismatch("past blocks do not match T_ini")
    mu_ini = np.asarray(history[0], dtype=float).reshape(-1)
    eta_ini = np.asarray(history[1], dtype=float).reshape(-1)
    if mu_ini.size != kappa * T_ini or eta_ini.size != nu * T_ini:
        raise ShapeMismatch(f"history must hold T_ini={T_ini} samples per channel")
    r_mu = np.zeros(kappa * N) if refs[0] is None else np.asarray(refs[0], dtype=float).reshape(-1)
    r_eta = np.zeros(nu * N) if refs[1] is None else np.asarray(refs[1], dtype=float).reshape(-1)
    if r_mu.size != kappa * N or r_eta.size != nu * N:
        raise ShapeMismatch("references must hold N samples per channel")

    b = QpBuilder()
    b.var("gamma", n_cols)
    b.var("sigma", (kappa + nu) * (T_ini + N))
    b.var("mu", kappa * N)
    b.var("eta", nu * N)
    H = np.vstack([U_p, U_f, Y_p, Y_f])
    n_rows = H.shape[0]
    sel_mu = np.zeros((n_rows, kappa * N))
    sel_mu[kappa * T_ini : kappa * (T_ini + N)] = np.eye(kappa * N)
    sel_eta = np.zeros((n_rows, nu * N))
    sel_eta[n_rows - nu * N :] = np.eye(nu * N)
    rhs = np.concatenate([mu_ini, np.zeros(kappa * N), eta_ini, np.zeros(nu * N)])
    b.rows("hankel", {"gamma": H, "sigma": np.eye(n_rows), "mu": -sel_mu, "eta": -sel_eta}, rhs)
    if config.u_min is not None or config.u_max is not None:
        lo = -np.inf if config.u_min is None else np.tile(np.broadcast_to(config.u_min, (kappa,)), N)
        hi = np.inf if config.u_max is None else np.tile(np.broadcast_to(config.u_max, (kappa,)), N)
        b.box("input_bounds", "mu", lo, hi)
    b.cost("eta", np.tile(_weights(config.Q, nu, "Q"), N), r_eta)
    b.cost("mu", np.tile(_weights(config.R, kappa, "R"), N), r_mu)
    b.cost("gamma", config.psi_gamma)
    b.cost("sigma", config.psi_sigma)
    return b.build()


def ddpc_plan(problem: QpProblem, settings: SolverSettings | None = None, warm_start=None) -> DdpcPlan:
    """Solve an assembled DDPC program and split out the plan.

    Raises:
        SolverFailed: The solver did not reach a solved status.
    """
    sol = solve(problem, settings, warm_start=warm_start)
    if not sol.solved:
        raise SolverFailed(f"DDPC solve ended with status {sol.status.value}", sol)
    lay = problem.layout
    gamma, sigma = sol.x[lay["gamma"]], sol.x[lay["sigma"]]
    return DdpcPlan(
        sol.x[lay["mu"]],
        sol.x[lay["eta"]],
        gamma,
        sigma,
        float(np.linalg.norm(sigma)),
        float(np.linalg.norm(gamma)),
        sol,
    )
