"""Data collection, closed-loop runs and the experiment drivers."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .control import OrbitReference, TrackingGains, cop_command
from .errors import CollectionFellOver, InsufficientHistory, OutOfRange
from .hankel import DatasetCollection, Side, Trajectory, Transition, other_side, uniform_phase_grid
from .plant import HybridPlant, PlantConfig, PlantState, Perturbation
from .rom import HlipState, LipParams, hlip_flow, hlip_s2s

log = logging.getLogger(__name__)

ARMS = ("nominal", "ddpc", "hddpc")


@dataclass(frozen=True)
class ScheduledStep:
    step_length: float
    duration: float
    stance_side: Side
    width: float = 0.2


@dataclass
class GaitSchedule:
    """Steps to walk during collection; the first ``warmup`` are not recorded."""

    steps: list[ScheduledStep]
    warmup: int = 2

    def __post_init__(self):
        if len(self.steps) <= self.warmup:
            raise ValueError("schedule needs at least one recorded step after the warm-up")
        for s in self.steps:
            if not -0.4 <= s.step_length <= 0.4:
                raise ValueError(f"step length {s.step_length} outside plant-feasible range [-0.4, 0.4]")
            if not 0.3 <= s.duration <= 2.0:
                raise ValueError(f"step duration {s.duration} outside plant-feasible range [0.3, 2]")
            if not 0 < s.width <= 0.5:
                raise ValueError(f"step width {s.width} outside (0, 0.5]")
        for a, b in zip(self.steps, self.steps[1:]):
            if b.stance_side != other_side(a.stance_side):
                raise ValueError("stance sides must alternate")

    @classmethod
    def random(
        cls,
        n_steps: int,
        rng: np.random.Generator,
        step_range=(0.11, 0.15),
        duration_range=(0.9, 1.1),
        width_range=(0.18, 0.22),
        warmup: int = 2,
        first_side: Side = "L",
        dt: float = 1e-3,
    ) -> "GaitSchedule":
        """Uniform random steps; warm-up steps sit at the range centres.

        Durations are rounded to whole ticks so every domain ends on the grid.
        """
        if n_steps < 1:
            raise ValueError("schedule must contain at least one recorded step")
        centre = (np.mean(step_range), np.mean(duration_range), np.mean(width_range))
        steps, side = [], first_side
        for i in range(warmup + n_steps):
            if i < warmup:
                lam, T, w = centre
            else:
                lam = rng.uniform(*step_range)
                T = rng.uniform(*duration_range)
                w = rng.uniform(*width_range)
            T = round(T / dt) * dt
            steps.append(ScheduledStep(float(lam), float(T), side, float(w)))
            side = other_side(side)
        return cls(steps, warmup)

    @classmethod
    def constant(cls, n_steps: int, step_length=0.13, duration=1.0, width=0.2, warmup=2, first_side: Side = "L"):
        steps, side = [], first_side
        for _ in range(warmup + n_steps):
            steps.append(ScheduledStep(step_length, duration, side, width))
            side = other_side(side)
        return cls(steps, warmup)

    def reference(self, i: int, lip: LipParams) -> OrbitReference:
        s = self.steps[i]
        return OrbitReference(s.step_length / s.duration, s.width, dataclasses.replace(lip, T_ssp=s.duration))


class PhaseSampler:
    """Turns the tick stream of one domain into samples on a uniform phase grid.

    Grid points falling between ticks are interpolated linearly.
    """

    def __init__(self, n_points: int):
        self.n = n_points
        self.reset()

    def reset(self):
        self.k = 0
        self._last = None
        self._ticks = []

    def regrid(self, tau_end: float) -> list[tuple[np.ndarray, np.ndarray]]:
        """Full grid over ``[0, tau_end)`` from the ticks pushed so far.

        Used after an early impact, when the realized domain is shorter than
        planned and its samples must span what actually happened.
        """
        if not self._ticks:
            raise ValueError("no ticks recorded in this domain")
        taus = np.array([t for t, _, _ in self._ticks])
        vals = np.array([np.concatenate([m, e]) for _, m, e in self._ticks])
        grid = np.arange(self.n) / self.n * tau_end
        cols = np.column_stack([np.interp(grid, taus, vals[:, i]) for i in range(vals.shape[1])])
        return [(row[:2].copy(), row[2:].copy()) for row in cols]

    def push(self, tau: float, mu, eta) -> list[tuple[np.ndarray, np.ndarray]]:
        mu, eta = np.asarray(mu, dtype=float), np.asarray(eta, dtype=float)
        self._ticks.append((float(tau), mu.copy(), eta.copy()))
        out = []
        while self.k < self.n:
            target = self.k / self.n
            if tau < target - 1e-12:
                break
            if self._last is None or tau - self._last[0] <= 1e-12 or abs(tau - target) <= 1e-12:
                out.append((mu.copy(), eta.copy()))
            else:
                t0, m0, e0 = self._last
                w = (target - t0) / (tau - t0)
                out.append((m0 + w * (mu - m0), e0 + w * (eta - e0)))
            self.k += 1
        self._last = (tau, mu, eta)
        return out


def deadbeat_gain(params: LipParams) -> np.ndarray:
    """Gain ``K`` making ``A - e1 K`` nilpotent for the step-to-step map.

    ``lambda = lambda* + K (x - x*)`` on the post-impact state returns the
    H-LIP to its orbit in two steps.
    """
    A, _ = hlip_s2s(params)
    if params.T_dsp:
        raise ValueError("deadbeat gain is derived for T_dsp = 0")
    c, s = A[0, 0], A[1, 0] / params.omega
    return np.array([2 * c, (c * c + s * s) / (params.omega * s)])


def hlip_dataset(
    n_steps: int,
    rng: np.random.Generator,
    params: LipParams = LipParams(),
    v_des: float = 0.13,
    width: float = 0.2,
    n_points: int = 50,
    step_noise: float = 0.01,
    warmup: int = 2,
) -> DatasetCollection:
    """Exact H-LIP walking data with the CoP held on the stance foot.

    Foot placement is the deadbeat step-to-step law around the reference
    orbit plus uniform noise, which keeps the walk bounded while exciting it.
    """
    ref = OrbitReference(v_des, width, params)
    K = deadbeat_gain(params)
    side: Side = "L"
    p, v = ref.start_state(side)
    trajectories, transitions = [], []
    grid = uniform_phase_grid(n_points)
    prev = None
    for i in range(warmup + n_steps):
        xs = [hlip_flow(HlipState(p, v), tau * params.T_ssp, params) for tau in grid]
        eta = np.array([np.asarray(x.p) for x in xs])
        mu = np.zeros_like(eta)
        end = hlip_flow(HlipState(p, v), params.T_ssp, params)
        p0, v0 = ref.start_state(side)
        lam = ref.foot_placement(side)
        step = np.array([lam[a] + K @ (np.array([p[a], v[a]]) - np.array([p0[a], v0[a]])) for a in range(2)])
        step = step + rng.uniform(-step_noise, step_noise, size=2)
        if i >= warmup:
            trajectories.append(
                Trajectory(mu, eta, params.T_ssp, side, prev[2], prev[0], prev[1], index=i)
            )
        transitions.append(Transition(i, side, step, params.T_ssp, np.asarray(end.p)))
        prev = (mu, eta, step)
        p, v = np.asarray(end.p) - step, np.asarray(end.v)
        side = other_side(side)
    return DatasetCollection(trajectories, transitions)


def collect_dataset(
    schedule: GaitSchedule,
    plant_config: PlantConfig,
    n_points: int = 50,
    gains: TrackingGains = TrackingGains(),
    seed: int | None = None,
    excitation: float = 0.0,
    excitation_period: float = 0.1,
) -> DatasetCollection:
    """Walk the schedule on the plant and record every step after the warm-up.

    Each domain tracks the H-LIP orbit of its scheduled step with the CoP
    law; the scheduled foot placement is taken at the end of the domain.
    Transitions of the warm-up steps are kept so step-to-step windows can
    reach back before the first recorded domain.

    ``excitation`` adds a piecewise-constant random CoP offset, uniform on
    ``[-excitation, excitation]`` per axis and redrawn every
    ``excitation_period`` seconds, so the recorded inputs are rich enough to
    identify their effect on the CoM.

    Raises:
        CollectionFellOver: The plant fell during collection.
    """
    cfg = dataclasses.replace(plant_config, early_impact_phase_jitter=0.0)
    lip = cfg.lip
    first = schedule.steps[0]
    p0, v0 = schedule.reference(0, lip).start_state(first.stance_side)
    state = PlantState(p0, v0, np.zeros(2), stance_side=first.stance_side, step_duration=first.duration)
    plant = HybridPlant(cfg, state, seed=seed, log=False)
    sampler = PhaseSampler(n_points)
    dither_rng = np.random.default_rng(seed)
    hold = max(1, int(round(excitation_period / cfg.dt)))
    offset = np.zeros(2)
    trajectories, transitions = [], []
    prev = None
    for i, step in enumerate(schedule.steps):
        ref = schedule.reference(i, lip)
        samples = []
        while True:
            s = plant.state
            samples.extend(sampler.push(s.phase, s.cop_actual, s.com))
            p_des, v_des, a_des = ref.at(step.stance_side, s.phase * step.duration)
            if excitation > 0 and s.tick % hold == 0:
                offset = dither_rng.uniform(-excitation, excitation, size=2)
            plant.step(cop_command(s.com, s.com_vel, p_des, v_des, a_des, lip, gains) + offset)
            if plant.fallen():
                raise CollectionFellOver(f"plant fell at t={plant.state.time:.3f} s during step {i}")
            if plant.guard() == "impact":
                break
        s = plant.state
        samples.extend(sampler.push(s.phase, s.cop_actual, s.com))
        sampler.reset()
        mu = np.array([m for m, _ in samples])
        eta = np.array([e for _, e in samples])
        lam = ref.foot_placement(step.stance_side)
        if i >= schedule.warmup:
            trajectories.append(
                Trajectory(mu, eta, step.duration, step.stance_side, prev[2], prev[0], prev[1], index=i)
            )
        transitions.append(Transition(i, step.stance_side, lam, step.duration, s.com.copy()))
        prev = (mu, eta, lam)
        nxt = schedule.steps[i + 1].duration if i + 1 < len(schedule.steps) else step.duration
        plant.impact(lam, nxt)
    return DatasetCollection(trajectories, transitions, delta_tau=1.0 / n_points)


@dataclass
class RunLog:
    arm: str
    seed: int
    duration: float
    ticks: list = field(default_factory=list)
    plans: list = field(default_factory=list)
    impacts: list = field(default_factory=list)
    perturbations: list = field(default_factory=list)
    outcome: str = "Completed"
    fall_time: float | None = None
    replan_failures: int = 0
    # Wall-clock timings vary run to run, so they stay out of the JSON form.
    solve_times: list = field(default_factory=list, compare=False)

    @property
    def completed(self) -> bool:
        return self.outcome == "Completed"

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "seed": self.seed,
            "duration": self.duration,
            "outcome": self.outcome,
            "fall_time": self.fall_time,
            "replan_failures": self.replan_failures,
            "perturbations": [perturbation_dict(p) for p in self.perturbations],
            "impacts": self.impacts,
            "plans": self.plans,
            "ticks": [list(t) for t in self.ticks],
        }

    def times(self) -> np.ndarray:
        return np.array([t.time for t in self.ticks])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(t, name) for t in self.ticks])


def perturbation_dict(p: Perturbation) -> dict:
    return {"time": p.time, "duration": p.duration, "delta_v": list(p.delta_v)}


@dataclass
class ArmSetup:
    """What a closed-loop run needs beyond the plant."""

    lip: LipParams
    v_des: float
    width: float = 0.2
    bank: object = None  # HankelBank for the data-driven arms
    hddpc: object = None  # HddpcConfig
    replan_phases: tuple = (0.0,)
    settings: object = None  # SolverSettings
    gains: TrackingGains = TrackingGains()


def make_planner(arm: str, setup: ArmSetup, side: Side):
    from .planner import HddpcPlanner, ReferenceSet

    ref = OrbitReference(setup.v_des, setup.width, setup.lip)
    refs = ReferenceSet(ref, ref.step, setup.lip.T_ssp)
    config = setup.hddpc
    if arm == "ddpc":
        config = config.pinned(ref.step, setup.width, setup.lip.T_ssp)
    return HddpcPlanner(setup.bank, config, refs, side, setup.lip.T_ssp, setup.settings)


def run_closed_loop(
    arm: str,
    plant_config: PlantConfig,
    setup: ArmSetup,
    duration: float,
    perturbations: Sequence[Perturbation] = (),
    seed: int = 0,
    record_plans: bool = True,
) -> RunLog:
    """Walk for ``duration`` seconds under one controller arm.

    ``nominal`` tracks the orbit with fixed steps; ``ddpc`` replans the CoM
    with steps and timing pinned to the orbit; ``hddpc`` replans everything.
    All arms share the plant, its guard and the low-level CoP law.
    """
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    if not duration > 0:
        raise ValueError("run duration must be positive")
    lip = setup.lip
    ref = OrbitReference(setup.v_des, setup.width, lip)
    side: Side = "L"
    p0, v0 = ref.start_state(side)
    plant = HybridPlant(
        plant_config,
        PlantState(p0, v0, np.zeros(2), stance_side=side, step_duration=lip.T_ssp),
        seed=seed,
    )
    planner = None if arm == "nominal" else make_planner(arm, setup, side)
    sampler = PhaseSampler(planner.config.n_current) if planner else None
    phases = sorted(set(setup.replan_phases))
    next_replan = 0
    events = sorted(perturbations, key=lambda p: p.time)
    out = RunLog(arm, seed, duration, perturbations=list(events))
    n_ticks = int(round(duration / plant_config.dt))
    for _ in range(n_ticks):
        s = plant.state
        tau = s.phase
        if planner is not None:
            for mu, eta in sampler.push(tau, s.cop_actual, s.com):
                planner.record_sample(mu, eta)
            if next_replan < len(phases) and tau >= phases[next_replan] - 1e-9 and tau < 1.0:
                while next_replan < len(phases) and tau >= phases[next_replan] - 1e-9:
                    next_replan += 1
                result = planner.replan(s.com, s.com_vel, tau)
                if result is None:
                    out.replan_failures += 1
                else:
                    out.solve_times.append(result.solve_time + result.assemble_time)
                    if record_plans:
                        out.plans.append(dict(result.to_dict(), time=s.time, domain=s.domain_index))
        desired = planner.desired(tau) if planner is not None else None
        if desired is None:
            desired = ref.at(s.stance_side, tau * lip.T_ssp)
        plant.step(cop_command(s.com, s.com_vel, *desired, lip, setup.gains), events)
        if plant.fallen():
            out.outcome = "Fell"
            out.fall_time = plant.state.time
            break
        if plant.guard() == "impact":
            s = plant.state
            step, next_T = ref.foot_placement(s.stance_side), lip.T_ssp
            if planner is not None:
                early = s.phase < 1.0 - 1e-9
                sampler.push(s.phase, s.cop_actual, s.com)
                samples = sampler.regrid(s.phase) if early else None
                if not early:
                    for mu, eta in sampler.push(1.0, s.cop_actual, s.com):
                        planner.record_sample(mu, eta)
                sampler.reset()
                if planner.next_step() is not None:
                    step = planner.next_step()
                    next_T = planner.next_duration() or next_T
                # The guard fires on the tick grid, so plan durations are rounded onto it.
                next_T = max(1, round(next_T / plant_config.dt)) * plant_config.dt
                planner.on_impact(step, s.phase * s.step_duration, s.com.copy(), next_T, samples)
            out.impacts.append(
                {"time": s.time, "phase": s.phase, "step": [float(step[0]), float(step[1])], "next_duration": next_T}
            )
            plant.impact(step, next_T)
            next_replan = 0
    out.ticks = plant.records
    return out


def realized_speed(log: RunLog, window: float) -> tuple[float, float]:
    """Mean (displacement over the final ``window`` seconds) and std of the x velocity."""
    t = log.times()
    if window <= 0 or window > log.duration + 1e-9:
        raise OutOfRange(f"window {window} s does not fit in a {log.duration} s run")
    if t.size == 0 or t[-1] < log.duration - 1e-9:
        raise InsufficientHistory("run ended before the speed window closed")
    start = log.duration - window
    i0 = int(np.searchsorted(t, start - 1e-9))
    x = log.column("com_x")
    mean = (x[-1] - x[i0]) / (t[-1] - t[i0])
    return float(mean), float(np.std(log.column("vel_x")[i0:]))


def perturbation_schedule(
    seed: int,
    magnitude_range: tuple[float, float],
    duration: float,
    interval: float = 0.5,
    pulse: float = 0.01,
    start: float | None = None,
) -> list[Perturbation]:
    """Impulses every ``interval`` seconds along 45-degree directions."""
    lo, hi = magnitude_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad magnitude range {magnitude_range}")
    rng = np.random.default_rng(seed)
    t = interval if start is None else start
    out = []
    while t + pulse <= duration + 1e-12:
        k = int(rng.integers(8))
        mag = float(rng.uniform(lo, hi))
        ang = k * math.pi / 4
        out.append(Perturbation(round(t, 9), pulse, (mag * math.cos(ang), mag * math.sin(ang))))
        t += interval
    return out


def schedule_hash(events: Iterable[Perturbation]) -> str:
    from .serialization import canonical_json

    return hashlib.sha256(canonical_json([perturbation_dict(p) for p in events]).encode()).hexdigest()


@dataclass
class ArmReport:
    arm: str
    completed: bool
    fall_time: float | None
    mean_speed: float | None = None
    speed_std: float | None = None
    mean_slack: float | None = None
    max_slack: float | None = None
    replan_failures: int = 0
    solve_time_median: float | None = None
    solve_time_max: float | None = None

    @classmethod
    def from_log(cls, log: RunLog, window: float | None = None) -> "ArmReport":
        rep = cls(log.arm, log.completed, log.fall_time, replan_failures=log.replan_failures)
        if window is not None and log.completed:
            rep.mean_speed, rep.speed_std = realized_speed(log, window)
        slacks = [slack_norm(p) for p in log.plans]
        if slacks:
            rep.mean_slack, rep.max_slack = float(np.mean(slacks)), float(np.max(slacks))
        if log.solve_times:
            rep.solve_time_median = float(np.median(log.solve_times))
            rep.solve_time_max = float(np.max(log.solve_times))
        return rep

    def to_dict(self, timings: bool = False) -> dict:
        d = dataclasses.asdict(self)
        if not timings:
            d.pop("solve_time_median")
            d.pop("solve_time_max")
        return d


def slack_norm(plan: dict) -> float:
    return float(math.sqrt(sum(v * v for v in plan["sigma_norms"].values())))


@dataclass
class ExperimentReport:
    kind: str
    seed: int
    duration: float
    rows: list = field(default_factory=list)  # (label, ArmReport)
    schedule_hash: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self, timings: bool = False) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "duration": self.duration,
            "schedule_hash": self.schedule_hash,
            "meta": self.meta,
            "rows": [dict(label=label, **rep.to_dict(timings)) for label, rep in self.rows],
        }

    def by_label(self) -> dict:
        return {label: rep for label, rep in self.rows}


def tracking_dataset(
    v_des: float, plant_config: PlantConfig, n_steps=10, n_points=50, seed=0, spread=0.02, width=0.2, excitation=0.0,
):
    """Collection centred on the orbit step of ``v_des``."""
    lip = plant_config.lip
    lam = v_des * lip.T_ssp
    rng = np.random.default_rng(seed)
    sched = GaitSchedule.random(
        n_steps, rng, (lam - spread, lam + spread), (0.9 * lip.T_ssp, 1.1 * lip.T_ssp),
        (width - 0.02, width + 0.02), dt=plant_config.dt,
    )
    return collect_dataset(sched, plant_config, n_points, seed=seed, excitation=excitation)


def tracking_experiment(
    speeds: Sequence[float],
    duration: float,
    plant_config: PlantConfig,
    hddpc_config,
    window: float = 10.0,
    seed: int = 0,
    n_steps: int = 10,
    replan_phases=(0.0,),
    settings=None,
    width: float = 0.2,
    spread: float = 0.02,
    excitation: float = 0.0,
) -> tuple[ExperimentReport, list[RunLog]]:
    """HDDPC walking at each desired speed; realized speed over the final window.

    Each speed gets its own dataset, collected around its orbit step, and
    step-length bounds spanning the same range.
    """
    from .planner import HankelBank

    if window > duration:
        raise OutOfRange(f"window {window} s longer than the run ({duration} s)")
    rep = ExperimentReport("tracking", seed, duration, meta={"window": window, "spread": spread})
    logs = []
    for v in speeds:
        lam = v * plant_config.lip.T_ssp
        config = dataclasses.replace(hddpc_config, step_x_bounds=(lam - spread, lam + spread))
        data = tracking_dataset(v, plant_config, n_steps, config.n_current, seed, spread, width, excitation)
        setup = ArmSetup(
            plant_config.lip, v, width, HankelBank.from_dataset(data, config), config,
            tuple(replan_phases), settings,
        )
        log_ = run_closed_loop("hddpc", plant_config, setup, duration, (), seed)
        logs.append(log_)
        rep.rows.append((f"{v:g}", ArmReport.from_log(log_, window)))
    return rep, logs


def perturbation_experiment(
    seed: int,
    magnitudes: tuple[float, float],
    plant_config: PlantConfig,
    setup: ArmSetup,
    duration: float = 8.0,
    interval: float = 0.5,
    pulse: float = 0.01,
    arms: Sequence[str] = ARMS,
) -> tuple[ExperimentReport, dict]:
    """Same seeded impulse train applied to every arm."""
    events = perturbation_schedule(seed, magnitudes, duration, interval, pulse)
    rep = ExperimentReport(
        "perturbation", seed, duration, schedule_hash=schedule_hash(events),
        meta={"magnitudes": list(magnitudes), "interval": interval, "pulse": pulse},
    )
    logs = {}
    for arm in arms:
        log_ = run_closed_loop(arm, plant_config, setup, duration, events, seed)
        logs[arm] = log_
        rep.rows.append((arm, ArmReport.from_log(log_)))
    return rep, logs
