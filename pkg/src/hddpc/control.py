"""Low-level CoP tracking law and H-LIP reference trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hankel import Side
from .rom import HlipState, LipParams, hlip_flow, hlip_period2_orbit, hlip_periodic_orbit


@dataclass(frozen=True)
class TrackingGains:
    kp: float = 40.0
    kd: float = 12.0


def cop_command(p, v, p_des, v_des, a_des, params: LipParams, gains: TrackingGains = TrackingGains()):
    """CoP that makes the pendulum follow ``p_des`` with PD correction.

    Inverts ``a = (g / z0) (p - u)`` for the commanded acceleration
    ``a_des + kp (p_des - p) + kd (v_des - v)``.
    """
    a_cmd = np.asarray(a_des) + gains.kp * (np.asarray(p_des) - p) + gains.kd * (np.asarray(v_des) - v)
    return np.asarray(p, dtype=float) - params.z0 / params.g * a_cmd


def lateral_step(width: float, side: Side) -> float:
    """Signed lateral foot placement leaving ``side`` stance: left stance steps right."""
    return -width if side == "L" else width


@dataclass(frozen=True)
class OrbitReference:
    """Analytic H-LIP gait: period-1 in x, period-2 in y, fixed step timing."""

    v_des: float
    width: float
    params: LipParams

    @property
    def step(self) -> float:
        return hlip_periodic_orbit(self.v_des, self.params)[2]

    def foot_placement(self, side: Side) -> np.ndarray:
        return np.array([self.step, lateral_step(self.width, side)])

    def start_state(self, side: Side) -> tuple[np.ndarray, np.ndarray]:
        """CoM position and velocity at the start of a ``side`` stance domain."""
        p, v, _ = hlip_periodic_orbit(self.v_des, self.params)
        ya, yb = hlip_period2_orbit(-self.width, self.width, self.params)
        y = ya if side == "L" else yb
        return np.array([p, y[0]]), np.array([v, y[1]])

    def at(self, side: Side, t: float):
        """``(p, v, a)`` of the reference at time ``t`` into a ``side`` domain."""
        p0, v0 = self.start_state(side)
        s = hlip_flow(HlipState(p0, v0), t, self.params)
        p = np.asarray(s.p)
        return p, np.asarray(s.v), self.params.g / self.params.z0 * p

    def samples(self, side: Side, phases) -> np.ndarray:
        """CoM reference at the given phases of a nominal-duration domain."""
        T = self.params.T_ssp
        return np.array([self.at(side, float(tau) * T)[0] for tau in phases])
