"""Hybrid data-driven predictive control: the multi-domain planning QP.

One program plans the CoM/CoP samples of the current and ``K`` upcoming
single-support domains together with the foot placements and durations of
``J + 1`` step-to-step transitions. Every constraint is linear once the
Bezier rows are written at normalized phases, the velocity bounds are
multiplied through by the (positive) step duration, and the current
domain's duration is frozen, so each replan is a single convex QP.

Index conventions: domain ``d = 0`` is the current one; transition ``j``
leaves domain ``j``, carrying the input ``(lambda_x, lambda_y, T^j)`` with
``T^j`` the duration of domain ``j``, and the output pre-impact CoM of
domain ``j``. Samples are ``(x, y)`` interleaved.
"""

from __future__ import annotations

import dataclasses
import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

from ._qp import QpBuilder
from .bezier import (
    BezierCurve,
    bernstein_derivative_matrix,
    bernstein_derivative_row,
    bernstein_matrix,
    bernstein_row,
    bez,
    dbez,
    ddbez,
)
from .control import OrbitReference
from .errors import (
    InfeasibleBeyondTolerance,
    InsufficientHistory,
    MissingHankel,
    OutOfRange,
    ShapeMismatch,
    SolverFailed,
)
from .hankel import (
    DatasetCollection,
    HankelMatrix,
    Side,
    domain_hankels,
    other_side,
    s2s_hankels,
    select,
    uniform_phase_grid,
)
from .qpsolver import QpProblem, QpSolution, SolverSettings, Status, solve
from .rom import LipParams, frame_transform, hlip_periodic_orbit

log = logging.getLogger(__name__)

KAPPA = NU = 2  # CoP in, CoM out, (x, y) each
S2S_IN, S2S_OUT = 3, 2


def points_for(delta_tau: float) -> int:
    """Sample count of the uniform phase grid closest to ``delta_tau``.

    A spacing that does not divide 1 is rounded to the nearest count that
    does (0.08 becomes 12 points, i.e. 1/12).
    """
    if not 0 < delta_tau <= 1:
        raise ValueError(f"delta_tau must lie in (0, 1], got {delta_tau}")
    n = max(1, int(round(1.0 / delta_tau)))
    if abs(n * delta_tau - 1.0) > 1e-9:
        log.info("delta_tau=%g does not divide 1; using %d points (1/%d)", delta_tau, n, n)
    return n


@dataclass
class HddpcConfig:
    K: int = 2
    J: int | None = None
    T_ini: int = 4
    T_ini_s2s: int = 2
    delta_tau_current: float = 0.02
    delta_tau_future: float = 0.08
    Q: tuple[float, float] = (10.0, 10.0)
    R: tuple[float, float] = (0.1, 0.1)
    psi_gamma: float = 1e-2
    psi_sigma: float = 1e4
    step_x_bounds: tuple[float, float] = (0.11, 0.15)
    # Magnitude of the lateral step; the sign follows the stance side.
    step_y_bounds: tuple[float, float] = (0.1, 0.35)
    duration_bounds: tuple[float, float] = (0.9, 1.1)
    vel_x_bounds: tuple[float, float] = (-1.0, 1.5)
    vel_y_bounds: tuple[float, float] = (-1.5, 1.5)
    cop_halfwidth: tuple[float, float] = (0.08, 0.05)
    bezier_degree: int | None = 7
    feasibility_tol: float = 1e-4

    def __post_init__(self):
        if self.J is None:
            self.J = self.K
        if self.K < 0 or self.J < self.K:
            raise ValueError(f"need 0 <= K <= J, got K={self.K}, J={self.J}")
        if self.T_ini < 0 or self.T_ini_s2s < 0:
            raise ValueError("estimation windows must be nonnegative")
        for name in ("step_x_bounds", "step_y_bounds", "duration_bounds", "vel_x_bounds", "vel_y_bounds"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is an empty interval: {lo} > {hi}")
        if self.duration_bounds[0] <= 0:
            raise ValueError("step durations must be positive")
        if self.bezier_degree is not None and self.bezier_degree < 1:
            raise ValueError("bezier_degree must be >= 1 or None")
        if self.psi_gamma < 0 or self.psi_sigma < 0:
            raise ValueError("psi_gamma and psi_sigma must be nonnegative")
        self.n_current = points_for(self.delta_tau_current)
        self.n_future = points_for(self.delta_tau_future)
        if self.T_ini > self.n_future or self.T_ini > self.n_current:
            raise ValueError("T_ini cannot exceed the number of samples per domain")

    def grid_points(self, d: int) -> int:
        return self.n_current if d == 0 else self.n_future

    def pinned(self, step_x: float, width: float, duration: float) -> "HddpcConfig":
        """Copy with foot placement and duration bounds collapsed to a point."""
        from dataclasses import replace

        return replace(
            self,
            step_x_bounds=(step_x, step_x),
            step_y_bounds=(width, width),
            duration_bounds=(duration, duration),
        )


def shrink_select(H: HankelMatrix, tau: float, T_ini: int, maxN: int, block_dim: int) -> HankelMatrix:
    """Rows of the current-domain matrix still relevant at phase ``tau``.

    Returns ``Select(d * s, d * (T_ini + maxN - s), H)`` with
    ``s = floor(maxN * tau)``; the remaining horizon is ``maxN - s``.
    """
    if not 0 <= tau < 1:
        raise OutOfRange(f"phase {tau} outside [0, 1)")
    if H.rows != block_dim * (T_ini + maxN):
        raise OutOfRange(f"matrix has {H.rows} rows, expected {block_dim * (T_ini + maxN)}")
    s = shift_for(tau, maxN)
    return select(block_dim * s, block_dim * (T_ini + maxN - s), H)


def shift_for(tau: float, maxN: int) -> int:
    # Phases computed from tick counts land a hair below grid points.
    return min(int(math.floor(maxN * tau + 1e-9)), maxN - 1)


class HistorySample(NamedTuple):
    domain: int  # 0 for the current domain, -1 for the previous one
    mu: np.ndarray
    eta: np.ndarray


def build_ini_window(history: Sequence[HistorySample], T_ini: int, step_last) -> tuple[np.ndarray, np.ndarray]:
    """Last ``T_ini`` samples, previous-domain ones moved into the current frame.

    Returns flattened ``(mu_ini, eta_ini)``.
    """
    if T_ini == 0:
        return np.zeros(0), np.zeros(0)
    if len(history) < T_ini:
        raise InsufficientHistory(f"{len(history)} samples available, T_ini={T_ini}")
    tail = history[len(history) - T_ini :]
    lam = np.asarray(step_last, dtype=float)
    mu, eta = [], []
    for smp in tail:
        if smp.domain < -1:
            raise InsufficientHistory("history reaches back more than one domain")
        shift = lam if smp.domain == -1 else 0.0
        mu.append(frame_transform(smp.mu, shift))
        eta.append(frame_transform(smp.eta, shift))
    return np.concatenate(mu), np.concatenate(eta)


@dataclass
class TransitionRecord:
    step: np.ndarray
    duration: float
    pre_impact_com: np.ndarray

    def __post_init__(self):
        self.step = np.asarray(self.step, dtype=float).reshape(2)
        self.pre_impact_com = np.asarray(self.pre_impact_com, dtype=float).reshape(2)
        self.duration = float(self.duration)


@dataclass
class S2SHistory:
    """Completed transitions, oldest first."""

    transitions: list[TransitionRecord] = field(default_factory=list)

    def append(self, step, duration, pre_impact_com):
        self.transitions.append(TransitionRecord(step, duration, pre_impact_com))

    def last(self, n: int) -> list[TransitionRecord]:
        if len(self.transitions) < n:
            raise InsufficientHistory(f"{len(self.transitions)} transitions recorded, need {n}")
        return self.transitions[len(self.transitions) - n :] if n else []


@dataclass
class HankelBank:
    """Composed domain matrices per (stance side, tail grid, body grid) and S2S matrices."""

    domain: dict
    s2s: dict
    T_ini: int
    T_ini_s2s: int

    @classmethod
    def from_dataset(cls, data: DatasetCollection, config: HddpcConfig) -> "HankelBank":
        domain = {}
        for side in ("L", "R"):
            trajs = data.by_side(side)
            if not trajs:
                continue
            for prev_n, n in {(config.n_current, config.n_current), (config.n_current, config.n_future),
                              (config.n_future, config.n_future)}:
                domain[(side, prev_n, n)] = domain_hankels(trajs, config.T_ini, n, prev_n)
        s2s = {}
        for direction in ("L2R", "R2L"):
            try:
                s2s[direction] = s2s_hankels(data.transitions, direction, config.T_ini_s2s)
            except Exception as exc:  # noqa: BLE001 - reported when requested
                log.debug("no %s S2S windows: %s", direction, exc)
        return cls(domain, s2s, config.T_ini, config.T_ini_s2s)

    def domain_matrix(self, side: Side, prev_n: int, n: int):
        try:
            return self.domain[(side, prev_n, n)]
        except KeyError:
            raise MissingHankel(f"no {side}-stance matrix with grids {prev_n}->{n}") from None

    def s2s_matrix(self, side: Side):
        direction = "L2R" if side == "L" else "R2L"
        try:
            return self.s2s[direction]
        except KeyError:
            raise MissingHankel(f"no {direction} step-to-step matrix") from None


@dataclass
class ReferenceSet:
    """CoM/CoP references on each grid, nominal step and duration."""

    orbit: OrbitReference
    step: float
    duration: float
    _cache: dict = field(default_factory=dict, repr=False)

    def eta(self, side: Side, n: int) -> np.ndarray:
        key = (side, n)
        if key not in self._cache:
            self._cache[key] = self.orbit.samples(side, uniform_phase_grid(n))
        return self._cache[key]

    def mu(self, side: Side, n: int) -> np.ndarray:
        return np.zeros((n, 2))

    def transition(self, side: Side) -> TransitionRecord:
        p, _ = self.orbit.start_state(other_side(side))
        lam = self.orbit.foot_placement(side)
        return TransitionRecord(lam, self.duration, p + lam)


def extract_reference(v_des: float, params: LipParams, config: HddpcConfig | None = None, width: float = 0.2):
    """Nominal references from the H-LIP orbit at speed ``v_des``.

    Returns ``(r_mu, r_eta, step, duration)`` where ``r_mu`` and ``r_eta`` are
    dicts keyed by ``(stance side, grid points)``; ``r_mu`` is all zeros
    (CoP centred on the stance foot).
    """
    config = config or HddpcConfig()
    _, _, step = hlip_periodic_orbit(v_des, params)
    ref = ReferenceSet(OrbitReference(v_des, width, params), step, params.T_ssp)
    r_eta, r_mu = {}, {}
    for side in ("L", "R"):
        for n in {config.n_current, config.n_future}:
            r_eta[(side, n)] = ref.eta(side, n)
            r_mu[(side, n)] = ref.mu(side, n)
    return r_mu, r_eta, step, params.T_ssp


@dataclass
class PlanRequest:
    """Everything measured that a replan needs.

    ``prev_samples`` and ``current_samples`` are ``(mu, eta)`` pairs on the
    current-domain grid, each in its own stance frame; only current samples
    before the replan phase are used.
    """

    com: np.ndarray
    com_vel: np.ndarray
    tau: float
    duration: float  # frozen duration of the current domain
    stance_side: Side
    prev_samples: list
    current_samples: list
    step_last: np.ndarray  # foot placement that started the current domain
    s2s_history: S2SHistory

    def __post_init__(self):
        self.com = np.asarray(self.com, dtype=float).reshape(2)
        self.com_vel = np.asarray(self.com_vel, dtype=float).reshape(2)
        self.step_last = np.asarray(self.step_last, dtype=float).reshape(2)
        if not 0 <= self.tau < 1:
            raise OutOfRange(f"phase {self.tau} outside [0, 1)")
        if not self.duration > 0:
            raise ValueError("current step duration must be positive")

    @property
    def t0(self) -> float:
        return self.tau * self.duration

    def history(self, shift: int) -> list[HistorySample]:
        if len(self.current_samples) < shift:
            raise InsufficientHistory(
                f"{len(self.current_samples)} current-domain samples recorded, phase needs {shift}"
            )
        prev = [HistorySample(-1, np.asarray(m), np.asarray(e)) for m, e in self.prev_samples]
        cur = [HistorySample(0, np.asarray(m), np.asarray(e)) for m, e in self.current_samples[:shift]]
        return prev + cur


@dataclass
class HddpcProblem:
    qp: QpProblem
    sides: list
    grids: list  # per domain: phases of the planned samples
    shift: int
    request: PlanRequest
    config: HddpcConfig
    assemble_time: float = field(default=0.0, compare=False)

    @property
    def block_sizes(self) -> dict:
        return {k: v.stop - v.start for k, v in self.qp.layout.items()}


@dataclass
class PlanResult:
    alphas: list  # per domain (degree + 1, 2) or None
    steps: np.ndarray  # (J + 1, 2)
    durations: np.ndarray  # (J + 1,)
    mu: list  # per domain (N_d, 2)
    eta: list
    s2s_eta: np.ndarray  # (J + 1, 2) planned pre-impact CoM
    gamma_norms: dict
    sigma_norms: dict
    sides: list
    grids: list
    t0: float
    tau: float
    objective: float
    residual: float
    status: str
    iterations: int
    solve_time: float = field(default=0.0, compare=False)
    assemble_time: float = field(default=0.0, compare=False)
    solution: QpSolution | None = field(default=None, repr=False, compare=False)

    @property
    def sigma_norm(self) -> float:
        return float(np.sqrt(sum(v**2 for v in self.sigma_norms.values())))

    def advance(self) -> "PlanResult | None":
        """The remainder of this plan seen from the next domain, if any remains."""
        if len(self.alphas) < 2 or self.alphas[1] is None:
            return None
        return dataclasses.replace(
            self,
            alphas=self.alphas[1:],
            steps=self.steps[1:],
            durations=self.durations[1:],
            mu=self.mu[1:],
            eta=self.eta[1:],
            s2s_eta=self.s2s_eta[1:],
            sides=self.sides[1:],
            grids=self.grids[1:],
            t0=0.0,
            tau=0.0,
            solution=None,
        )

    def to_dict(self) -> dict:
        return {
            "alphas": [None if a is None else a.tolist() for a in self.alphas],
            "steps": self.steps.tolist(),
            "durations": self.durations.tolist(),
            "s2s_eta": self.s2s_eta.tolist(),
            "gamma_norms": dict(self.gamma_norms),
            "sigma_norms": dict(self.sigma_norms),
            "sides": list(self.sides),
            "t0": self.t0,
            "tau": self.tau,
            "objective": self.objective,
            "residual": self.residual,
            "status": self.status,
            "iterations": self.iterations,
        }


@functools.lru_cache(maxsize=64)
def _bezier_rows(n: int, N: int, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Position and velocity rows for the last ``N`` points of an ``n``-point grid."""
    phases = uniform_phase_grid(n)[n - N :]
    B = _interleave(bernstein_matrix(phases, degree))
    dB = _interleave(bernstein_derivative_matrix(phases, degree))
    B.flags.writeable = dB.flags.writeable = False
    return B, dB


def _interleave(rows: np.ndarray) -> np.ndarray:
    """Per-sample basis rows -> rows acting on interleaved ``(x, y)`` control points."""
    return np.kron(rows, np.eye(2))


def _step_box(config: HddpcConfig, side: Side):
    lo_y, hi_y = config.step_y_bounds
    if side == "L":
        y = (-hi_y, -lo_y)
    else:
        y = (lo_y, hi_y)
    return np.array([config.step_x_bounds[0], y[0]]), np.array([config.step_x_bounds[1], y[1]])


def hddpc_assemble(request: PlanRequest, bank: HankelBank, refs: ReferenceSet, config: HddpcConfig) -> HddpcProblem:
    """Assemble the multi-domain planning QP.

    Raises:
        MissingHankel: The bank lacks a matrix for a planned domain or transition.
        ShapeMismatch: Bank and configuration disagree on window lengths.
    """
    t_start = time.perf_counter()
    if bank.T_ini != config.T_ini or bank.T_ini_s2s != config.T_ini_s2s:
        raise ShapeMismatch("Hankel bank was built for different estimation windows")
    K, J, T_ini, Ts = config.K, config.J, config.T_ini, config.T_ini_s2s
    deg = config.bezier_degree
    sides = [request.stance_side]
    for _ in range(max(K, J)):
        sides.append(other_side(sides[-1]))
    n_cur = config.n_current
    s = shift_for(request.tau, n_cur)
    hw = np.asarray(config.cop_halfwidth, dtype=float)

    b = QpBuilder()
    grids, Ns = [], []
    for d in range(K + 1):
        n = config.grid_points(d)
        N = n - s if d == 0 else n
        phases = uniform_phase_grid(n)[n - N :]
        grids.append(phases)
        Ns.append(N)
        if deg is not None:
            b.var(f"alpha{d}", 2 * (deg + 1))
        b.var(f"mu{d}", KAPPA * N)
        b.var(f"eta{d}", NU * N)
    mats = []
    for d in range(K + 1):
        prev_n = n_cur if d <= 1 else config.n_future
        H_u, H_y = bank.domain_matrix(sides[d], prev_n, config.grid_points(d))
        if d == 0:
            H_u = shrink_select(H_u, request.tau, T_ini, n_cur, KAPPA)
            H_y = shrink_select(H_y, request.tau, T_ini, n_cur, NU)
        mats.append((H_u.data, H_y.data))
        b.var(f"gamma{d}", H_u.columns)
        b.var(f"sigma{d}", (KAPPA + NU) * (T_ini + Ns[d]))
    s2s_mats = []
    for j in range(J + 1):
        Hs_u, Hs_y = bank.s2s_matrix(sides[j])
        if Hs_u.L != Ts + 1:
            raise ShapeMismatch("S2S matrix window does not match T_ini_s2s")
        s2s_mats.append((Hs_u.data, Hs_y.data))
        b.var(f"ms{j}", S2S_IN)
        b.var(f"es{j}", S2S_OUT)
        b.var(f"gs{j}", Hs_u.columns)
        b.var(f"ss{j}", (S2S_IN + S2S_OUT) * (Ts + 1))

    # (a) continuous-domain Hankel rows, one block per domain
    history = request.history(s)
    mu_ini0, eta_ini0 = build_ini_window(history, T_ini, request.step_last)
    current = request.current_samples
    for d in range(K + 1):
        H_u, H_y = mats[d]
        N = Ns[d]
        ru, ry = KAPPA * (T_ini + N), NU * (T_ini + N)
        terms = {
            f"gamma{d}": np.vstack([H_u, H_y]),
            f"sigma{d}": sp.identity(ru + ry),
        }
        rhs = np.zeros(ru + ry)
        terms[f"mu{d}"] = -sp.eye(ru + ry, KAPPA * N, k=-KAPPA * T_ini)
        terms[f"eta{d}"] = -sp.eye(ru + ry, NU * N, k=-(ru + NU * T_ini))
        if d == 0:
            rhs[: KAPPA * T_ini] = mu_ini0
            rhs[ru : ru + NU * T_ini] = eta_ini0
        elif T_ini:
            # Initial window: tail of domain d-1 minus the foot placement lambda^{d-1}.
            prev_n, prev_N = config.grid_points(d - 1), Ns[d - 1]
            prev_shift = prev_n - prev_N
            lam_rows = np.zeros((ru + ry, S2S_IN))
            for i, k in enumerate(range(prev_n - T_ini, prev_n)):
                for a in range(2):
                    r_mu, r_eta = KAPPA * i + a, ru + NU * i + a
                    lam_rows[r_mu, a] = 1.0
                    lam_rows[r_eta, a] = 1.0
                    if k >= prev_shift:
                        col = 2 * (k - prev_shift) + a
                        terms.setdefault(f"mu{d - 1}", np.zeros((ru + ry, KAPPA * prev_N)))
                        terms.setdefault(f"eta{d - 1}", np.zeros((ru + ry, NU * prev_N)))
                        terms[f"mu{d - 1}"][r_mu, col] = -1.0
                        terms[f"eta{d - 1}"][r_eta, col] = -1.0
                    else:
                        m_k, e_k = current[k]
                        rhs[r_mu] += m_k[a]
                        rhs[r_eta] += e_k[a]
            terms[f"ms{d - 1}"] = lam_rows
        b.rows(f"hankel{d}", terms, rhs)

    # (b) step-to-step Hankel rows
    past = request.s2s_history.last(Ts)
    for j in range(J + 1):
        Hs_u, Hs_y = s2s_mats[j]
        ru, ry = S2S_IN * (Ts + 1), S2S_OUT * (Ts + 1)
        terms = {f"gs{j}": np.vstack([Hs_u, Hs_y]), f"ss{j}": sp.identity(ru + ry)}
        rhs = np.zeros(ru + ry)
        for i in range(Ts + 1):
            idx = j - Ts + i
            if idx < 0:
                rec = past[len(past) + idx]
                rhs[S2S_IN * i : S2S_IN * (i + 1)] = np.concatenate([rec.step, [rec.duration]])
                rhs[ru + S2S_OUT * i : ru + S2S_OUT * (i + 1)] = rec.pre_impact_com
            else:
                mi = terms.setdefault(f"ms{idx}", np.zeros((ru + ry, S2S_IN)))
                mi[S2S_IN * i : S2S_IN * (i + 1)] -= np.eye(S2S_IN)
                ei = terms.setdefault(f"es{idx}", np.zeros((ru + ry, S2S_OUT)))
                ei[ru + S2S_OUT * i : ru + S2S_OUT * (i + 1)] -= np.eye(S2S_OUT)
        b.rows(f"s2s{j}", terms, rhs)

    if deg is not None:
        for d in range(K + 1):
            # (c) samples lie on the Bezier curve
            Bm, dB = _bezier_rows(config.grid_points(d), Ns[d], deg)
            b.rows(f"bezier{d}", {f"eta{d}": -sp.identity(NU * Ns[d]), f"alpha{d}": Bm}, 0.0)
            # (e) velocity bounds, multiplied through by the step duration
            vlo = np.tile([config.vel_x_bounds[0], config.vel_y_bounds[0]], Ns[d])
            vhi = np.tile([config.vel_x_bounds[1], config.vel_y_bounds[1]], Ns[d])
            if d == 0:
                b.rows("velocity0", {"alpha0": dB}, vlo * request.duration, vhi * request.duration)
            else:
                t_col = np.zeros((NU * Ns[d], S2S_IN))
                t_col[:, 2] = 1.0
                b.rows(f"velocity_lo{d}", {f"alpha{d}": dB, f"ms{d}": -vlo[:, None] * t_col}, 0.0, np.inf)
                b.rows(f"velocity_hi{d}", {f"alpha{d}": dB, f"ms{d}": -vhi[:, None] * t_col}, -np.inf, 0.0)
        # (d) planned pre-impact CoM is the last control point
        last = np.zeros((2, 2 * (deg + 1)))
        last[:, -2:] = np.eye(2)
        for j in range(min(K, J) + 1):
            b.rows(f"terminal{j}", {f"es{j}": -np.eye(2), f"alpha{j}": last}, 0.0)
        # (h) initial conditions at the current phase
        b.rows("initial_position", {"alpha0": _interleave(bernstein_row(request.tau, deg)[None, :])}, request.com)
        b.rows(
            "initial_velocity",
            {"alpha0": _interleave(bernstein_derivative_row(request.tau, deg)[None, :])},
            request.com_vel * request.duration,
        )

    # (f) CoP inside the foot
    for d in range(K + 1):
        b.box(f"cop{d}", f"mu{d}", np.tile(-hw, Ns[d]), np.tile(hw, Ns[d]))
    # (g) foot placement and duration boxes; the current duration is frozen
    for j in range(J + 1):
        lo, hi = _step_box(config, sides[j])
        tlo, thi = (request.duration, request.duration) if j == 0 else config.duration_bounds
        b.box(f"step{j}", f"ms{j}", np.append(lo, tlo), np.append(hi, thi))

    Q, R = np.asarray(config.Q, dtype=float), np.asarray(config.R, dtype=float)
    for d in range(K + 1):
        n = config.grid_points(d)
        r_eta = refs.eta(sides[d], n)[n - Ns[d] :].reshape(-1)
        r_mu = refs.mu(sides[d], n)[n - Ns[d] :].reshape(-1)
        b.cost(f"eta{d}", np.tile(Q, Ns[d]), r_eta)
        b.cost(f"mu{d}", np.tile(R, Ns[d]), r_mu)
        b.cost(f"gamma{d}", config.psi_gamma)
        b.cost(f"sigma{d}", config.psi_sigma)
    for j in range(J + 1):
        b.cost(f"gs{j}", config.psi_gamma)
        b.cost(f"ss{j}", config.psi_sigma)
    qp = b.build(check_psd=False)
    return HddpcProblem(qp, sides, grids, s, request, config, time.perf_counter() - t_start)


# Loose splitting tolerance; the active-set polish supplies the accuracy.
# Equilibration is off: on these programs it slowed convergence 3-5x.
PLANNER_SETTINGS = SolverSettings(eps_abs=3e-4, eps_rel=3e-4, rho=10.0, scaling_iters=0)


def constraint_residual(qp: QpProblem, x: np.ndarray) -> float:
    if qp.m == 0:
        return 0.0
    Ax = qp.A @ x
    return float(max(np.max(qp.l - Ax, initial=0.0), np.max(Ax - qp.u, initial=0.0)))


def hddpc_plan(problem: HddpcProblem, settings: SolverSettings | None = None, warm_start=None) -> PlanResult:
    """Solve an assembled program and unpack the plan.

    Raises:
        SolverFailed: Infeasible or unbounded program.
        InfeasibleBeyondTolerance: The best iterate violates a constraint by
            more than ``config.feasibility_tol``.
    """
    qp, cfg = problem.qp, problem.config
    if warm_start is not None and (warm_start[0].size != qp.n or warm_start[1].size != qp.m):
        warm_start = None
    settings = settings or PLANNER_SETTINGS
    sol = solve(qp, settings, warm_start=warm_start)
    if sol.status in (Status.PRIMAL_INFEASIBLE, Status.DUAL_INFEASIBLE):
        raise SolverFailed(f"planning QP is {sol.status.value}", sol)
    residual = constraint_residual(qp, sol.x)
    if not sol.polished and residual > cfg.feasibility_tol:
        # Polishing missed the active set; tighten the splitting iterations instead.
        tight = dataclasses.replace(settings, eps_abs=settings.eps_abs * 1e-2, eps_rel=settings.eps_rel * 1e-2)
        retry = solve(qp, tight, warm_start=(sol.x, sol.y))
        retry.solve_time += sol.solve_time
        sol = retry
        residual = constraint_residual(qp, sol.x)
    x = sol.x
    if residual > cfg.feasibility_tol:
        raise InfeasibleBeyondTolerance(
            f"constraint residual {residual:.3e} exceeds {cfg.feasibility_tol:g}", residual
        )
    lay = qp.layout
    K, J = cfg.K, cfg.J
    alphas, mus, etas = [], [], []
    for d in range(K + 1):
        alphas.append(x[lay[f"alpha{d}"]].reshape(-1, 2) if cfg.bezier_degree is not None else None)
        mus.append(x[lay[f"mu{d}"]].reshape(-1, 2))
        etas.append(x[lay[f"eta{d}"]].reshape(-1, 2))
    ms = np.array([x[lay[f"ms{j}"]] for j in range(J + 1)])
    gam = {f"domain{d}": float(np.linalg.norm(x[lay[f"gamma{d}"]])) for d in range(K + 1)}
    sig = {f"domain{d}": float(np.linalg.norm(x[lay[f"sigma{d}"]])) for d in range(K + 1)}
    for j in range(J + 1):
        gam[f"s2s{j}"] = float(np.linalg.norm(x[lay[f"gs{j}"]]))
        sig[f"s2s{j}"] = float(np.linalg.norm(x[lay[f"ss{j}"]]))
    req = problem.request
    return PlanResult(
        alphas=alphas,
        steps=ms[:, :2].copy(),
        durations=ms[:, 2].copy(),
        mu=mus,
        eta=etas,
        s2s_eta=np.array([x[lay[f"es{j}"]] for j in range(J + 1)]),
        gamma_norms=gam,
        sigma_norms=sig,
        sides=list(problem.sides),
        grids=[g.copy() for g in problem.grids],
        t0=req.t0,
        tau=req.tau,
        objective=sol.objective,
        residual=residual,
        status=sol.status.value,
        iterations=sol.iterations,
        solve_time=sol.solve_time,
        assemble_time=problem.assemble_time,
        solution=sol,
    )


class HddpcPlanner:
    """Receding-horizon planner owning histories, warm starts and the last plan.

    Before enough real samples and transitions exist, histories are padded
    with the nominal orbit so the first replan is well posed.
    """

    def __init__(
        self,
        bank: HankelBank,
        config: HddpcConfig,
        reference: ReferenceSet,
        stance_side: Side = "L",
        duration: float | None = None,
        settings: SolverSettings | None = None,
    ):
        self.bank = bank
        self.config = config
        self.reference = reference
        self.settings = settings
        self.side = stance_side
        self.duration = reference.duration if duration is None else float(duration)
        n = config.n_current
        prev = other_side(stance_side)
        self.step_last = reference.orbit.foot_placement(prev)
        self.prev_samples = [(np.zeros(2), e) for e in reference.eta(prev, n)]
        self.current_samples: list = []
        self.s2s = S2SHistory()
        side = stance_side
        for _ in range(config.T_ini_s2s):
            side = other_side(side)
        for _ in range(config.T_ini_s2s):
            tr = reference.transition(side)
            self.s2s.append(tr.step, tr.duration, tr.pre_impact_com)
            side = other_side(side)
        self.plan: PlanResult | None = None
        self.failures = 0
        self.replans = 0
        self.last_failed = False
        self.last_error: str | None = None
        self._warm = None

    def record_sample(self, mu, eta):
        """Append the next current-domain sample (stance frame) on the fine grid."""
        if len(self.current_samples) >= self.config.n_current:
            raise OutOfRange("current domain already holds a full grid of samples")
        self.current_samples.append((np.asarray(mu, dtype=float).copy(), np.asarray(eta, dtype=float).copy()))

    def _pad_current(self, shift: int):
        ref = self.reference.eta(self.side, self.config.n_current)
        while len(self.current_samples) < shift:
            self.current_samples.append((np.zeros(2), ref[len(self.current_samples)].copy()))

    def on_impact(self, step, duration: float, pre_impact_com, next_duration: float, samples=None):
        """Close the current domain and open the next one.

        Args:
            step: Foot placement taken at this impact.
            duration: Realized length of the closing domain.
            pre_impact_com: CoM at impact, in the closing stance frame.
            next_duration: Duration that will phase the new domain.
            samples: Optional full grid replacing the recorded samples, e.g.
                the closing domain regridded over its realized length after
                an early impact.
        """
        n = self.config.n_current
        if samples is not None:
            if len(samples) != n:
                raise ShapeMismatch(f"need {n} samples to close a domain, got {len(samples)}")
            self.current_samples = [(np.asarray(m, dtype=float).copy(), np.asarray(e, dtype=float).copy())
                                    for m, e in samples]
        self._pad_current(n)
        self.prev_samples = self.current_samples
        self.current_samples = []
        self.s2s.append(step, duration, pre_impact_com)
        self.step_last = np.asarray(step, dtype=float).reshape(2).copy()
        self.side = other_side(self.side)
        self.duration = float(next_duration)
        # Until the next replan succeeds, follow what the last plan said about this domain.
        self.plan = None if self.plan is None else self.plan.advance()
        self._warm = None

    def request(self, com, com_vel, tau: float) -> PlanRequest:
        shift = shift_for(tau, self.config.n_current)
        self._pad_current(shift)
        return PlanRequest(
            com, com_vel, tau, self.duration, self.side,
            self.prev_samples, self.current_samples[:shift], self.step_last, self.s2s,
        )

    def replan(self, com, com_vel, tau: float) -> PlanResult | None:
        """Solve from the measured state; keep the previous plan on failure."""
        try:
            problem = hddpc_assemble(self.request(com, com_vel, tau), self.bank, self.reference, self.config)
            result = hddpc_plan(problem, self.settings, self._warm)
        except (SolverFailed, InfeasibleBeyondTolerance) as exc:
            self.failures += 1
            self.last_failed = True
            self.last_error = str(exc)
            log.warning("replan at tau=%.3f rejected: %s", tau, exc)
            return None
        self.last_failed = False
        self.plan = result
        self._warm = (result.solution.x, result.solution.y)
        self.replans += 1
        return result

    def desired(self, tau: float):
        """``(p, v, a)`` of the current-domain plan at phase ``tau``, or ``None``."""
        if self.plan is None or self.plan.alphas[0] is None:
            return None
        curve = BezierCurve(self.plan.alphas[0], self.duration)
        t = min(max(tau, 0.0), 1.0) * self.duration
        return bez(t, curve), dbez(t, curve), ddbez(t, curve)

    def next_step(self) -> np.ndarray | None:
        return None if self.plan is None else self.plan.steps[0].copy()

    def next_duration(self) -> float | None:
        if self.plan is None or len(self.plan.durations) < 2:
            return None
        return float(self.plan.durations[1])
