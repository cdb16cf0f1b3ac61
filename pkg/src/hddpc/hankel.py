"""Trajectory (page / Hankel) matrices: the data-driven model.

Samples are stacked per time step, so a column of a matrix built from
``d``-dimensional data reads ``(s_0[0], ..., s_0[d-1], s_1[0], ...)``; for
the walking channels this is ``(x, y)`` interleaved per sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Literal, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    EmptyCollection,
    MissingTransitionData,
    OutOfRange,
    ShapeMismatch,
    TrajectoryTooShort,
)
from .rom import frame_transform

Side = Literal["L", "R"]

DEFAULT_RANK_TOL = 1e-10


def other_side(side: Side) -> Side:
    return "R" if side == "L" else "L"


def uniform_phase_grid(n_points: int) -> np.ndarray:
    """``n_points`` phases ``k / n_points``, ``k = 0 .. n_points - 1``."""
    return np.arange(n_points) / n_points


def resample_phase_grid(samples: np.ndarray, n_points: int) -> np.ndarray:
    """Resample a uniform phase-grid sequence onto ``n_points`` points.

    Cubic-spline interpolation when there are at least four source samples,
    linear otherwise.

    Both grids start at phase 0 and omit phase 1, so a coarser target grid
    never needs extrapolation beyond the last source sample.
    """
    samples = np.asarray(samples, dtype=float)
    src = uniform_phase_grid(samples.shape[0])
    dst = uniform_phase_grid(n_points)
    if dst[-1] > src[-1] + 1e-12:
        raise ValueError("target grid is finer near phase 1 than the source grid")
    if samples.shape[0] >= 4:
        return CubicSpline(src, samples, axis=0)(dst)
    return np.column_stack([np.interp(dst, src, samples[:, j]) for j in range(samples.shape[1])])


def _as_samples(seq) -> np.ndarray:
    arr = np.asarray(seq, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


@dataclass
class Trajectory:
    """One single-support domain of walking data, in its stance-foot frame.

    ``step_length`` is the foot placement that started this domain, measured
    in the previous stance frame; ``prev_inputs``/``prev_outputs`` hold the
    previous domain's samples (previous stance frame) for composing windows
    that straddle the impact.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    duration: float
    stance_side: Side = "L"
    step_length: np.ndarray = field(default_factory=lambda: np.zeros(2))
    prev_inputs: np.ndarray | None = None
    prev_outputs: np.ndarray | None = None
    index: int = 0
    phase_grid: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = _as_samples(self.inputs)
        self.outputs = _as_samples(self.outputs)
        self.step_length = np.asarray(self.step_length, dtype=float)
        if self.prev_inputs is not None:
            self.prev_inputs = _as_samples(self.prev_inputs)
        if self.prev_outputs is not None:
            self.prev_outputs = _as_samples(self.prev_outputs)
        n = self.inputs.shape[0]
        if self.outputs.shape[0] != n:
            raise ShapeMismatch("inputs and outputs must have the same number of samples")
        if self.phase_grid is None:
            self.phase_grid = uniform_phase_grid(n)
        self.phase_grid = np.asarray(self.phase_grid, dtype=float)
        if self.phase_grid.shape != (n,):
            raise ShapeMismatch("phase grid length must equal the sample count")
        steps = np.diff(self.phase_grid)
        if n > 1 and (np.any(steps <= 0) or np.ptp(steps) > 1e-9):
            raise ValueError("phase grid must be strictly increasing with uniform spacing")
        if not self.duration > 0:
            raise ValueError("trajectory duration must be positive")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def delta_tau(self) -> float:
        return float(self.phase_grid[1] - self.phase_grid[0]) if len(self) > 1 else 1.0

    def channel(self, name: str) -> np.ndarray:
        if name == "inputs":
            return self.inputs
        if name == "outputs":
            return self.outputs
        raise KeyError(f"unknown channel {name!r}")

    def prev_channel(self, name: str) -> np.ndarray | None:
        return self.prev_inputs if name == "inputs" else self.prev_outputs


@dataclass
class Transition:
    """One step-to-step sample: leaving domain ``index`` on ``stance_side``."""

    index: int
    stance_side: Side
    step: np.ndarray
    duration: float
    pre_impact_com: np.ndarray

    def __post_init__(self):
        self.step = np.asarray(self.step, dtype=float)
        self.pre_impact_com = np.asarray(self.pre_impact_com, dtype=float)

    @property
    def direction(self) -> str:
        return "L2R" if self.stance_side == "L" else "R2L"

    def input_vector(self) -> np.ndarray:
        return np.concatenate([self.step, [self.duration]])


@dataclass
class DatasetCollection:
    trajectories: list[Trajectory]
    transitions: list[Transition] = field(default_factory=list)
    delta_tau: float | None = None
    channel_spec: dict = field(
        default_factory=lambda: {"inputs": ("cop_x", "cop_y"), "outputs": ("com_x", "com_y")}
    )

    def __post_init__(self):
        if not self.trajectories:
            raise EmptyCollection("a dataset collection needs at least one trajectory")
        dims = {(t.inputs.shape[1], t.outputs.shape[1]) for t in self.trajectories}
        if len(dims) != 1:
            raise ShapeMismatch(f"trajectories disagree on channel dimensions: {sorted(dims)}")
        dts = {round(t.delta_tau, 12) for t in self.trajectories}
        if self.delta_tau is None:
            self.delta_tau = self.trajectories[0].delta_tau
        if len(dts) != 1 or abs(next(iter(dts)) - self.delta_tau) > 1e-9:
            raise ShapeMismatch("all trajectories must share the phase step delta_tau")

    def by_side(self, side: Side) -> list[Trajectory]:
        return [t for t in self.trajectories if t.stance_side == side]

    def transitions_chronological(self) -> list[Transition]:
        return sorted(self.transitions, key=lambda tr: tr.index)


@dataclass(frozen=True)
class HankelMatrix:
    data: np.ndarray
    block_dim: int
    L: int
    column_mode: Literal["page", "sliding"] = "page"

    def __post_init__(self):
        data = np.array(self.data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        if data.shape[0] != self.block_dim * self.L:
            raise ShapeMismatch(
                f"row count {data.shape[0]} != block_dim * L = {self.block_dim * self.L}"
            )
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def columns(self) -> int:
        return self.data.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)


class PartitionSpec(NamedTuple):
    T_ini: int
    N: int

    @property
    def L(self) -> int:
        return self.T_ini + self.N


class PersistencyReport(NamedTuple):
    order: int
    full_row_rank: bool
    rank: int


def _as_sequences(data, channel: str | None) -> list[np.ndarray]:
    if isinstance(data, DatasetCollection):
        data = data.trajectories
    seqs = []
    for item in data:
        if isinstance(item, Trajectory):
            item = item.channel(channel or "inputs")
        seqs.append(_as_samples(item))
    return seqs


def build_page_matrix(data, L: int, channel: str | None = None) -> HankelMatrix:
    """One column per dataset holding its first ``L`` samples.

    Args:
        data: A :class:`DatasetCollection`, a list of :class:`Trajectory`, or a
            list of ``(T_i, d)`` arrays (1-D arrays are read as ``d = 1``).
        L: Window length in samples.
        channel: ``"inputs"`` or ``"outputs"`` when ``data`` holds trajectories.
    """
    seqs = _as_sequences(data, channel)
    if not seqs:
        raise EmptyCollection("cannot build a page matrix from zero datasets")
    dims = {s.shape[1] for s in seqs}
    if len(dims) != 1:
        raise ShapeMismatch(f"datasets disagree on channel dimension: {sorted(dims)}")
    short = [i for i, s in enumerate(seqs) if s.shape[0] < L]
    if short:
        raise TrajectoryTooShort(f"datasets {short} have fewer than L={L} samples")
    d = dims.pop()
    cols = [s[:L].reshape(-1) for s in seqs]
    return HankelMatrix(np.column_stack(cols), block_dim=d, L=L, column_mode="page")


def build_sliding_matrix(trajectory, L: int, channel: str | None = None) -> HankelMatrix:
    """Classic Hankel matrix: column ``j`` holds samples ``j .. j + L - 1``."""
    (seq,) = _as_sequences([trajectory], channel)
    T, d = seq.shape
    if T < L:
        raise TrajectoryTooShort(f"trajectory of length {T} shorter than L={L}")
    cols = [seq[j : j + L].reshape(-1) for j in range(T - L + 1)]
    return HankelMatrix(np.column_stack(cols), block_dim=d, L=L, column_mode="sliding")


def select(start_row: int, block_rows: int, H):
    """Rows ``[start_row, start_row + block_rows)`` of ``H``, all columns.

    Works on :class:`HankelMatrix` (returns one, with ``L`` rescaled when the
    slice is block aligned) and on plain arrays.
    """
    data = H.data if isinstance(H, HankelMatrix) else np.asarray(H)
    if start_row < 0 or block_rows < 0 or start_row + block_rows > data.shape[0]:
        raise OutOfRange(
            f"select({start_row}, {block_rows}) out of range for {data.shape[0]} rows"
        )
    out = data[start_row : start_row + block_rows]
    if not isinstance(H, HankelMatrix):
        return out
    d = H.block_dim
    if start_row % d == 0 and block_rows % d == 0:
        return HankelMatrix(out, block_dim=d, L=block_rows // d, column_mode=H.column_mode)
    return HankelMatrix(out, block_dim=1, L=block_rows, column_mode=H.column_mode)


def partition(H_u: HankelMatrix, H_y: HankelMatrix, spec: PartitionSpec):
    """Split input/output matrices into past (estimation) and future (prediction) blocks."""
    if H_u.L != spec.L or H_y.L != spec.L:
        raise ShapeMismatch(f"T_ini + N = {spec.L} does not match window lengths {H_u.L}, {H_y.L}")
    if H_u.columns != H_y.columns:
        raise ShapeMismatch("input and output matrices need equal column counts")
    if spec.T_ini < 1 or spec.N < 1:
        raise ShapeMismatch("T_ini and N must both be at least 1")
    k, nu = H_u.block_dim, H_y.block_dim
    U_p = select(0, k * spec.T_ini, H_u)
    U_f = select(k * spec.T_ini, k * spec.N, H_u)
    Y_p = select(0, nu * spec.T_ini, H_y)
    Y_f = select(nu * spec.T_ini, nu * spec.N, H_y)
    return U_p, U_f, Y_p, Y_f


def numerical_rank(matrix, tolerance: float = DEFAULT_RANK_TOL) -> int:
    data = matrix.data if isinstance(matrix, HankelMatrix) else np.asarray(matrix, dtype=float)
    if data.size == 0:
        return 0
    sv = np.linalg.svd(data, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tolerance * sv[0]))


def persistency_order(H: HankelMatrix, tolerance: float = DEFAULT_RANK_TOL) -> PersistencyReport:
    """Rank report for the persistency-of-excitation condition.

    ``full_row_rank`` holds when the relative numerical rank equals the row
    count. ``order`` is the largest ``L' <= L`` whose leading
    ``block_dim * L'`` rows are full row rank (so it equals ``L`` exactly when
    the whole matrix is).
    """
    rank = numerical_rank(H, tolerance)
    full = rank == H.rows
    if full:
        return PersistencyReport(H.L, True, rank)
    order = 0
    for Lp in range(H.L - 1, 0, -1):
        top = H.data[: H.block_dim * Lp]
        if numerical_rank(top, tolerance) == top.shape[0]:
            order = Lp
            break
    return PersistencyReport(order, False, rank)


def compose_domain_hankel(
    prev_inputs: Sequence[np.ndarray],
    cur_inputs: Sequence[np.ndarray],
    foot_placements: Sequence,
    T_ini: int,
) -> HankelMatrix:
    """Domain matrix whose columns straddle the impact into the current domain.

    Column ``i`` stacks the last ``T_ini`` samples of dataset ``i``'s previous
    domain, shifted into the current stance frame by its foot placement, on
    top of the dataset's current-domain samples.
    """
    prev = [_as_samples(p) for p in prev_inputs]
    cur = [_as_samples(c) for c in cur_inputs]
    if not cur:
        raise EmptyCollection("no datasets to compose")
    if len(prev) != len(cur) or len(foot_placements) != len(cur):
        raise MissingTransitionData(
            f"{len(cur)} current blocks but {len(prev)} previous blocks and "
            f"{len(foot_placements)} foot placements"
        )
    lengths = {c.shape[0] for c in cur}
    if len(lengths) != 1:
        raise ShapeMismatch("current-domain blocks must have equal length")
    cols = []
    for i, (p, c, lam) in enumerate(zip(prev, cur, foot_placements)):
        if lam is None:
            raise MissingTransitionData(f"dataset {i} has no transition foot placement")
        if p.shape[0] < T_ini:
            raise MissingTransitionData(
                f"dataset {i}: previous domain has {p.shape[0]} samples, T_ini={T_ini}"
            )
        lam = np.broadcast_to(np.asarray(lam, dtype=float), (p.shape[1],))
        tail = frame_transform(p[p.shape[0] - T_ini :], lam) if T_ini else p[:0]
        cols.append(np.concatenate([tail.reshape(-1), c.reshape(-1)]))
    d = cur[0].shape[1]
    return HankelMatrix(np.column_stack(cols), block_dim=d, L=T_ini + lengths.pop())


def domain_hankels(
    trajectories: Iterable[Trajectory],
    T_ini: int,
    n_points: int | None = None,
    prev_points: int | None = None,
) -> tuple[HankelMatrix, HankelMatrix]:
    """Composed input and output matrices for one stance side.

    ``n_points`` resamples the current-domain block and ``prev_points`` the
    previous-domain tail (defaulting to ``n_points``), so a matrix can take
    its initial window from a coarser or finer grid than its prediction.
    """
    trajs = list(trajectories)
    if not trajs:
        raise EmptyCollection("no trajectories for this stance side")
    if prev_points is None:
        prev_points = n_points
    out = []
    for ch in ("inputs", "outputs"):
        prevs, curs, lams = [], [], []
        for t in trajs:
            prev = t.prev_channel(ch)
            if prev is None:
                raise MissingTransitionData(f"trajectory {t.index} lacks previous-domain data")
            cur = t.channel(ch)
            if n_points is not None and n_points != cur.shape[0]:
                cur = resample_phase_grid(cur, n_points)
            if prev_points is not None and prev_points != prev.shape[0]:
                prev = resample_phase_grid(prev, prev_points)
            prevs.append(prev)
            curs.append(cur)
            lams.append(t.step_length)
        out.append(compose_domain_hankel(prevs, curs, lams, T_ini))
    return out[0], out[1]


def s2s_hankels(
    transitions: Sequence[Transition], direction: str, T_ini: int
) -> tuple[HankelMatrix, HankelMatrix]:
    """Step-to-step matrices for one transition direction.

    Columns are windows of ``T_ini + 1`` consecutive transitions whose last
    transition leaves the stance side named by ``direction``.
    """
    chain = sorted(transitions, key=lambda tr: tr.index)
    cols_u, cols_y = [], []
    for end in range(T_ini, len(chain)):
        window = chain[end - T_ini : end + 1]
        if window[-1].direction != direction:
            continue
        if [tr.index for tr in window] != list(range(window[0].index, window[-1].index + 1)):
            continue
        cols_u.append(np.concatenate([tr.input_vector() for tr in window]))
        cols_y.append(np.concatenate([tr.pre_impact_com for tr in window]))
    if not cols_u:
        raise EmptyCollection(f"no complete {direction} windows of length {T_ini + 1}")
    L = T_ini + 1
    H_u = HankelMatrix(np.column_stack(cols_u), block_dim=cols_u[0].size // L, L=L, column_mode="sliding")
    H_y = HankelMatrix(np.column_stack(cols_y), block_dim=cols_y[0].size // L, L=L, column_mode="sliding")
    return H_u, H_y
