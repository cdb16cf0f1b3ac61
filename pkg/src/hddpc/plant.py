"""Reduced hybrid walking plant.

A planar (x, y) inverted pendulum whose height wobbles with the step phase,
driven by a first-order-lagged CoP actuator, with Gaussian process noise,
impact resets at foot contact and velocity-impulse perturbations. It stands
in for a full-order walking simulator: close enough to the linear pendulum
for data-driven planning to work, different enough that the data matters.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .hankel import Side, other_side
from .rom import LipParams


@dataclass(frozen=True)
class PlantConfig:
    lip: LipParams = field(default_factory=LipParams)
    height_wobble_amplitude: float = 0.027
    cop_lag_time_constant: float = 0.03
    process_noise_std: float = 0.02
    cop_halfwidth: tuple[float, float] = (0.08, 0.05)
    early_impact_phase_jitter: float = 0.05
    min_phase_threshold: float = 0.5
    fall_position_limit: float = 0.6
    fall_velocity_limit: float = 1.5
    dt: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        hw = tuple(float(h) for h in self.cop_halfwidth)
        object.__setattr__(self, "cop_halfwidth", hw)
        nonneg = (
            self.height_wobble_amplitude,
            self.cop_lag_time_constant,
            self.process_noise_std,
            self.early_impact_phase_jitter,
            self.fall_position_limit,
            self.fall_velocity_limit,
        )
        if min(nonneg) < 0:
            raise ValueError("plant parameters must be nonnegative")
        if len(hw) != 2 or min(hw) <= 0:
            raise ValueError("cop_halfwidth must be two positive numbers")
        if not 0 < self.min_phase_threshold < 1:
            raise ValueError("min_phase_threshold must lie in (0, 1)")
        if self.height_wobble_amplitude >= self.lip.z0:
            raise ValueError("height wobble must stay below the nominal height")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def halfwidth(self) -> np.ndarray:
        return np.asarray(self.cop_halfwidth)

    def exact(self) -> "PlantConfig":
        """Same plant with lag, wobble, noise and early impacts switched off."""
        return dataclasses.replace(
            self,
            height_wobble_amplitude=0.0,
            cop_lag_time_constant=0.0,
            process_noise_std=0.0,
            early_impact_phase_jitter=0.0,
        )


@dataclass(frozen=True)
class Perturbation:
    time: float
    duration: float
    delta_v: tuple[float, float]

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("perturbation duration must be positive")
        object.__setattr__(self, "delta_v", tuple(float(v) for v in self.delta_v))

    def overlap(self, t0: float, t1: float) -> float:
        return max(0.0, min(t1, self.time + self.duration) - max(t0, self.time))


@dataclass(frozen=True)
class PlantState:
    com: np.ndarray
    com_vel: np.ndarray
    cop_actual: np.ndarray
    stance_world: np.ndarray = field(default_factory=lambda: np.zeros(2))
    stance_side: Side = "L"
    phase: float = 0.0
    domain_index: int = 0
    time: float = 0.0
    tick: int = 0
    step_duration: float = 1.0
    impact_phase: float = 1.0
    domain_start_tick: int = 0

    def __post_init__(self):
        for name in ("com", "com_vel", "cop_actual", "stance_world"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=float).reshape(2))

    @property
    def com_world(self) -> np.ndarray:
        return self.stance_world + self.com

    @property
    def cop_world(self) -> np.ndarray:
        return self.stance_world + self.cop_actual


class TickRecord(NamedTuple):
    time: float
    com_x: float
    com_y: float
    vel_x: float
    vel_y: float
    cop_x: float
    cop_y: float
    stance_x: float
    stance_y: float
    tau: float
    domain: int
    perturb_active: int


def clamp_cop(u, config: PlantConfig) -> np.ndarray:
    hw = config.halfwidth
    return np.clip(np.asarray(u, dtype=float), -hw, hw)


def _perturbation_accel(perturbations: Iterable[Perturbation], t0: float, dt: float):
    """Mean acceleration over ``[t0, t0 + dt]`` so the integrated impulse is exact."""
    acc = np.zeros(2)
    active = False
    for p in perturbations:
        ov = p.overlap(t0, t0 + dt)
        if ov > 0:
            acc += np.asarray(p.delta_v) / p.duration * (ov / dt)
            active = True
    return acc, active


def plant_step(
    state: PlantState,
    u_cop_command,
    dt: float,
    step_duration: float,
    perturbations: Sequence[Perturbation] = (),
    config: PlantConfig = PlantConfig(),
    noise=None,
) -> PlantState:
    """Advance the plant by one tick with RK4.

    Args:
        state: Current state.
        u_cop_command: Commanded CoP in the stance frame; clamped to the foot.
        dt: Tick length in seconds.
        step_duration: Duration used to advance the phase.
        perturbations: Impulses; only those overlapping this tick matter.
        config: Plant parameters.
        noise: Standard-normal draw of shape ``(2,)`` for the process noise,
            or ``None`` for none.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = clamp_cop(u_cop_command, config)
    lip = config.lip
    tau_lag = config.cop_lag_time_constant
    a_pert, _ = _perturbation_accel(perturbations, state.time, dt)
    phase0 = state.phase

    def rhs(s, x):
        p, v, c = x[0:2], x[2:4], x[4:6]
        tau = phase0 + s / step_duration
        z = lip.z0 + config.height_wobble_amplitude * np.sin(2 * np.pi * tau)
        cop = c if tau_lag > 0 else u
        dc = (u - c) / tau_lag if tau_lag > 0 else np.zeros(2)
        return np.concatenate([v, lip.g / z * (p - cop) + a_pert, dc])

    x = np.concatenate([state.com, state.com_vel, state.cop_actual if tau_lag > 0 else u])
    k1 = rhs(0.0, x)
    k2 = rhs(dt / 2, x + dt / 2 * k1)
    k3 = rhs(dt / 2, x + dt / 2 * k2)
    k4 = rhs(dt, x + dt * k3)
    x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    vel = x[2:4]
    if noise is not None and config.process_noise_std > 0:
        vel = vel + config.process_noise_std * np.sqrt(dt) * np.asarray(noise, dtype=float)
    cop = clamp_cop(x[4:6], config) if tau_lag > 0 else u
    return dataclasses.replace(
        state,
        com=x[0:2],
        com_vel=vel,
        cop_actual=cop,
        phase=min(1.0, (state.tick + 1 - state.domain_start_tick) * dt / step_duration),
        time=(state.tick + 1) * dt,
        tick=state.tick + 1,
        step_duration=step_duration,
    )


def check_guard(state: PlantState, config: PlantConfig) -> str | None:
    """``"impact"`` at the end of the step or at a drawn early-impact phase."""
    if state.phase >= 1.0 - 1e-9:
        return "impact"
    if config.early_impact_phase_jitter > 0 and state.phase >= config.min_phase_threshold:
        if state.phase >= state.impact_phase - 1e-9:
            return "impact"
    return None


def apply_impact(state: PlantState, step, next_duration: float | None = None, impact_phase=1.0):
    """Foot contact: re-base the CoM on the new stance foot and restart the phase."""
    lam = np.asarray(step, dtype=float).reshape(2)
    return dataclasses.replace(
        state,
        com=state.com - lam,
        stance_world=state.stance_world + lam,
        stance_side=other_side(state.stance_side),
        phase=0.0,
        domain_index=state.domain_index + 1,
        domain_start_tick=state.tick,
        step_duration=state.step_duration if next_duration is None else float(next_duration),
        impact_phase=float(impact_phase),
    )


def is_fallen(state: PlantState, config: PlantConfig) -> bool:
    return bool(
        np.any(np.abs(state.com) > config.fall_position_limit)
        or np.any(np.abs(state.com_vel) > config.fall_velocity_limit)
    )


def draw_impact_phase(rng: np.random.Generator, config: PlantConfig) -> float:
    """Early-impact phase for the next domain, uniform on ``[1 - jitter, 1]``."""
    if config.early_impact_phase_jitter <= 0:
        return 1.0
    tau = 1.0 - config.early_impact_phase_jitter * rng.uniform()
    return max(config.min_phase_threshold, tau)


class HybridPlant:
    """Stateful wrapper owning the random stream and the tick log."""

    def __init__(self, config: PlantConfig, state: PlantState, seed: int | None = None, log=True):
        self.config = config
        self.rng = np.random.default_rng(config.seed if seed is None else seed)
        self.state = dataclasses.replace(state, impact_phase=draw_impact_phase(self.rng, config))
        self.records: list[TickRecord] = [] if log else None

    def step(self, u_cop_command, perturbations: Sequence[Perturbation] = ()) -> PlantState:
        cfg = self.config
        noise = self.rng.standard_normal(2) if cfg.process_noise_std > 0 else None
        _, active = _perturbation_accel(perturbations, self.state.time, cfg.dt)
        self.state = plant_step(
            self.state, u_cop_command, cfg.dt, self.state.step_duration, perturbations, cfg, noise
        )
        if self.records is not None:
            s = self.state
            cw, pw = s.com_world, s.cop_world
            self.records.append(
                TickRecord(
                    s.time, cw[0], cw[1], s.com_vel[0], s.com_vel[1], pw[0], pw[1],
                    s.stance_world[0], s.stance_world[1], s.phase, s.domain_index, int(active),
                )
            )
        return self.state

    def guard(self) -> str | None:
        return check_guard(self.state, self.config)

    def impact(self, step, next_duration: float) -> PlantState:
        self.state = apply_impact(
            self.state, step, next_duration, draw_impact_phase(self.rng, self.config)
        )
        return self.state

    def fallen(self) -> bool:
        return is_fallen(self.state, self.config)
