"""Command-line entry point: ``hddpc collect | simulate | compare``.

Exit codes: 0 success, 2 configuration or input error, 3 the plant fell
during collection, 4 a simulated run fell.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import CollectionFellOver, ConfigError, HddpcError
from .hankel import build_page_matrix, persistency_order
from .harness import (
    ARMS,
    ArmSetup,
    ExperimentReport,
    GaitSchedule,
    collect_dataset,
    perturbation_experiment,
    perturbation_schedule,
    run_closed_loop,
    schedule_hash,
    tracking_experiment,
)
from .planner import HankelBank
from .serialization import read_dataset, write_csv, write_dataset, write_json, write_tick_csv

EXIT_OK, EXIT_CONFIG, EXIT_COLLECTION, EXIT_FELL = 0, 2, 3, 4

log = logging.getLogger("hddpc")


def _configure_logging():
    level = os.environ.get("HDDPC_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML configuration (packaged defaults if omitted)")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, repeatable")
    common.add_argument("--seed", type=int, help="replaces the config seed")
    common.add_argument("--out", type=Path, required=True, help="output file or directory")

    parser = argparse.ArgumentParser(prog="hddpc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("collect", parents=[common], help="walk a random gait schedule and write a dataset")
    sim = sub.add_parser("simulate", parents=[common], help="run one controller arm")
    sim.add_argument("--dataset", type=Path, help="dataset JSON, required for ddpc and hddpc")
    sim.add_argument("--arm", choices=ARMS, default="hddpc")
    cmp_ = sub.add_parser("compare", parents=[common], help="run all arms under a shared perturbation schedule")
    cmp_.add_argument("--dataset", type=Path, required=False, help="dataset JSON")
    cmp_.add_argument("--speeds", help="comma-separated speeds for a tracking sweep")
    return parser


def _setup(cfg: cfgmod.ToolConfig, data=None) -> ArmSetup:
    e = cfg.experiment
    bank = None if data is None else HankelBank.from_dataset(data, cfg.hddpc)
    return ArmSetup(cfg.plant.lip, e.v_des, e.width, bank, cfg.hddpc, tuple(e.replan_phases), cfg.solver, cfg.gains)


def _load_dataset(path):
    if path is None:
        raise ConfigError("this command needs --dataset")
    return read_dataset(path)


def cmd_collect(cfg: cfgmod.ToolConfig, out: Path) -> int:
    s = cfg.schedule
    sched = GaitSchedule.random(
        s.steps, np.random.default_rng(cfg.seed), s.step_range, s.duration_range, s.width_range, s.warmup,
        dt=cfg.plant.dt,
    )
    data = collect_dataset(sched, cfg.plant, s.n_points, cfg.gains, cfg.seed, s.excitation, s.excitation_period)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(data, out)
    for side in ("L", "R"):
        trajs = data.by_side(side)
        if trajs:
            rank = persistency_order(build_page_matrix(trajs, len(trajs[0]), "outputs")).rank
        else:
            rank = 0
        print(f"stance_{side}: {len(trajs)} columns, output rank {rank}")
    for direction in ("L2R", "R2L"):
        n = sum(tr.direction == direction for tr in data.transitions)
        print(f"s2s_{direction}: {n} transitions")
    return EXIT_OK


def cmd_simulate(cfg: cfgmod.ToolConfig, dataset, arm: str, out: Path) -> int:
    data = None if arm == "nominal" and dataset is None else _load_dataset(dataset)
    e = cfg.experiment
    events = perturbation_schedule(cfg.seed, e.magnitudes, e.duration, e.interval, e.pulse) if e.perturb else []
    run = run_closed_loop(arm, cfg.plant, _setup(cfg, data), e.duration, events, cfg.seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    doc = dict(run.to_dict(), schedule_hash=schedule_hash(events), config=cfgmod.to_dict(cfg))
    write_json(doc, out)
    write_tick_csv(out.with_suffix(".csv"), run.ticks)
    print(f"{arm}: {run.outcome}" + (f" at {run.fall_time:.3f} s" if run.fall_time is not None else ""))
    return EXIT_OK if run.completed else EXIT_FELL


def _report_rows(rep: ExperimentReport) -> list:
    rows = []
    for label, r in rep.rows:
        rows.append((rep.kind, label, rep.seed, rep.schedule_hash or "", int(r.completed),
                     "" if r.fall_time is None else float(r.fall_time),
                     "" if r.mean_speed is None else float(r.mean_speed),
                     "" if r.speed_std is None else float(r.speed_std),
                     "" if r.mean_slack is None else float(r.mean_slack),
                     r.replan_failures))
    return rows


REPORT_COLUMNS = ("kind", "label", "seed", "schedule_hash", "completed", "fall_time", "mean_speed",
                  "speed_std", "mean_slack", "replan_failures")


def cmd_compare(cfg: cfgmod.ToolConfig, dataset, out: Path, speeds=None) -> int:
    data = _load_dataset(dataset)
    e = cfg.experiment
    out.mkdir(parents=True, exist_ok=True)
    rep, _ = perturbation_experiment(
        cfg.seed, tuple(e.magnitudes), cfg.plant, _setup(cfg, data), e.duration, e.interval, e.pulse,
    )
    rep.meta["config"] = cfgmod.to_dict(cfg)
    for label, arm_rep in rep.rows:
        write_json(dict(kind=rep.kind, seed=rep.seed, duration=rep.duration, schedule_hash=rep.schedule_hash,
                        **arm_rep.to_dict()), out / f"report_{label}.json")
    write_json(rep.to_dict(), out / "comparison.json")
    rows = _report_rows(rep)
    if speeds:
        trep, _ = tracking_experiment(
            speeds, e.tracking_duration, cfg.plant, cfg.hddpc, e.window, cfg.seed, cfg.schedule.steps,
            e.replan_phases, cfg.solver, e.width,
        )
        write_json(trep.to_dict(), out / "tracking.json")
        rows += _report_rows(trep)
    write_csv(out / "summary.csv", REPORT_COLUMNS, rows)
    for label, r in rep.rows:
        print(f"{label}: " + ("completed" if r.completed else f"fell at {r.fall_time:.3f} s"))
    print(f"schedule {rep.schedule_hash[:12]} (seed {cfg.seed})")
    return EXIT_OK


def _parse_speeds(text: str | None):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--speeds must be comma-separated numbers: {exc}") from exc


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, args.override, args.seed)
        if args.command == "collect":
            return cmd_collect(cfg, args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.dataset, args.arm, args.out)
        return cmd_compare(cfg, args.dataset, args.out, _parse_speeds(args.speeds))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CollectionFellOver as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COLLECTION
    except (HddpcError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
