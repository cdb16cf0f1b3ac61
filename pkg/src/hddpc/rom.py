"""Linear inverted pendulum and hybrid-LIP closed forms.

All positions are CoM relative to the stance foot. The functions broadcast
over the last axis, so ``p`` and ``v`` may be scalars or ``(x, y)`` pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import SingularOrbit


@dataclass(frozen=True)
class LipParams:
    z0: float = 0.9
    g: float = 9.81
    T_ssp: float = 1.0
    T_dsp: float = 0.0

    def __post_init__(self):
        if not (self.z0 > 0 and self.g > 0 and self.T_ssp > 0 and self.T_dsp >= 0):
            raise ValueError(f"invalid LIP parameters: {self}")

    @property
    def omega(self) -> float:
        return float(np.sqrt(self.g / self.z0))

    @property
    def step_time(self) -> float:
        return self.T_ssp + self.T_dsp


class HlipState(NamedTuple):
    p: np.ndarray | float
    v: np.ndarray | float

    def as_array(self) -> np.ndarray:
        return np.array([self.p, self.v], dtype=float)


class S2SMatrices(NamedTuple):
    A: np.ndarray
    B: np.ndarray


def lip_accel(p, u_cop, params: LipParams):
    """CoM acceleration of the constant-height pendulum pivoting on the CoP."""
    return params.g / params.z0 * (np.asarray(p, dtype=float) - np.asarray(u_cop, dtype=float))


def hlip_flow(state: HlipState, t: float, params: LipParams) -> HlipState:
    """Closed-form single-support flow with the CoP held on the stance foot."""
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    w = params.omega
    c, s = np.cosh(w * t), np.sinh(w * t)
    p0 = np.asarray(state.p, dtype=float)
    v0 = np.asarray(state.v, dtype=float)
    return HlipState(p0 * c + v0 / w * s, p0 * w * s + v0 * c)


def hlip_reset(state: HlipState, step, params: LipParams) -> HlipState:
    """Double support collapsed into a reset: velocity kept, position re-based on the new foot."""
    p = np.asarray(state.p, dtype=float)
    v = np.asarray(state.v, dtype=float)
    return HlipState(p + v * params.T_dsp - np.asarray(step, dtype=float), v.copy())


def hlip_s2s(params: LipParams) -> S2SMatrices:
    """Linear step-to-step map ``x+ = A x + B lambda`` on the post-reset state."""
    w, T = params.omega, params.T_ssp
    c, s = np.cosh(w * T), np.sinh(w * T)
    flow = np.array([[c, s / w], [w * s, c]])
    reset = np.array([[1.0, params.T_dsp], [0.0, 1.0]])
    return S2SMatrices(reset @ flow, np.array([[-1.0], [0.0]]))


def hlip_periodic_orbit(v_des: float, params: LipParams, v_limit: float = 2.0):
    """Period-1 orbit ``(p*, v*, lambda*)`` whose mean speed is ``v_des``.

    ``(p*, v*)`` is the state at the start of single support.
    """
    if abs(v_des) > v_limit:
        raise ValueError(f"|v_des|={abs(v_des)} exceeds the configured limit {v_limit}")
    A, B = hlip_s2s(params)
    step = v_des * params.step_time
    lhs = np.eye(2) - A
    if abs(np.linalg.det(lhs)) < 1e-12:
        raise SingularOrbit("I - A is singular; no isolated period-1 orbit")
    x = np.linalg.solve(lhs, B[:, 0] * step)
    return float(x[0]), float(x[1]), float(step)


def hlip_period2_orbit(step_a: float, step_b: float, params: LipParams):
    """Period-2 orbit under alternating steps ``step_a``, ``step_b``.

    Returns the start-of-step states ``(x_a, x_b)`` such that stepping
    ``step_a`` from ``x_a`` lands on ``x_b`` and ``step_b`` from ``x_b``
    returns to ``x_a``. Used for the lateral direction, where the step
    alternates between ``-width`` and ``+width``.
    """
    A, B = hlip_s2s(params)
    b = B[:, 0]
    lhs = np.eye(2) - A @ A
    if abs(np.linalg.det(lhs)) < 1e-12:
        raise SingularOrbit("I - A^2 is singular; no isolated period-2 orbit")
    x_a = np.linalg.solve(lhs, A @ b * step_a + b * step_b)
    x_b = A @ x_a + b * step_a
    return x_a, x_b


def frame_transform(traj, step) -> np.ndarray:
    """Re-express stance-frame positions relative to the next stance foot."""
    return np.asarray(traj, dtype=float) - np.asarray(step, dtype=float)
