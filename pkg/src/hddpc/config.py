"""Tool configuration: a YAML document mapped onto dataclasses.

Every section is validated against the dataclass it populates and unknown
keys are rejected. ``--override`` flags are dotted paths whose values are
parsed as YAML scalars, so ``hddpc.K=1`` and ``schedule.step_range=[0.1, 0.2]``
both work.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from .control import TrackingGains
from .errors import ConfigError
from .planner import PLANNER_SETTINGS, HddpcConfig
from .plant import PlantConfig
from .qpsolver import SolverSettings
from .rom import LipParams


@dataclass
class ScheduleConfig:
    steps: int = 10
    step_range: tuple[float, float] = (0.11, 0.15)
    duration_range: tuple[float, float] = (0.9, 1.1)
    width_range: tuple[float, float] = (0.18, 0.22)
    warmup: int = 2
    n_points: int = 50
    excitation: float = 0.0
    excitation_period: float = 0.1


@dataclass
class ExperimentConfig:
    v_des: float = 0.13
    width: float = 0.2
    duration: float = 8.0
    replan_phases: tuple[float, ...] = (0.0,)
    perturb: bool = False
    magnitudes: tuple[float, float] = (0.10, 0.15)
    interval: float = 0.5
    pulse: float = 0.01
    speeds: tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2)
    tracking_duration: float = 15.0
    window: float = 10.0


@dataclass
class ToolConfig:
    seed: int = 0
    lip: LipParams = field(default_factory=LipParams)
    plant: PlantConfig = field(default_factory=PlantConfig)
    hddpc: HddpcConfig = field(default_factory=HddpcConfig)
    solver: SolverSettings = field(default_factory=lambda: dataclasses.replace(PLANNER_SETTINGS))
    gains: TrackingGains = field(default_factory=TrackingGains)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)


# Plant fields supplied from elsewhere in the document.
_PLANT_EXCLUDED = ("lip", "seed")
SECTIONS = {
    "lip": LipParams,
    "plant": PlantConfig,
    "hddpc": HddpcConfig,
    "solver": SolverSettings,
    "gains": TrackingGains,
    "schedule": ScheduleConfig,
    "experiment": ExperimentConfig,
}


def _allowed(section: str) -> dict:
    fields = {f.name: f for f in dataclasses.fields(SECTIONS[section]) if f.init}
    if section == "plant":
        for name in _PLANT_EXCLUDED:
            fields.pop(name)
    return fields


def _coerce(value, default):
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def _section(name: str, values, base):
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    allowed = _allowed(name)
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")
    kwargs = {k: _coerce(v, getattr(base, k)) for k, v in values.items()}
    if name == "hddpc":
        # J follows K unless set explicitly.
        kwargs.setdefault("J", None)
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name} section: {exc}") from exc


def from_dict(doc: dict | None) -> ToolConfig:
    """Validate a raw document into a ``ToolConfig``.

    Raises:
        ConfigError: Unknown keys, wrong types or values the dataclasses reject.
    """
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = sorted(set(doc) - set(SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    base = ToolConfig()
    lip = _section("lip", doc.get("lip"), base.lip)
    plant = _section("plant", doc.get("plant"), dataclasses.replace(base.plant, lip=lip, seed=seed))
    return ToolConfig(
        seed=seed,
        lip=lip,
        plant=plant,
        hddpc=_section("hddpc", doc.get("hddpc"), base.hddpc),
        solver=_section("solver", doc.get("solver"), base.solver),
        gains=_section("gains", doc.get("gains"), base.gains),
        schedule=_section("schedule", doc.get("schedule"), base.schedule),
        experiment=_section("experiment", doc.get("experiment"), base.experiment),
    )


def apply_override(doc: dict, spec: str) -> dict:
    """Set ``a.b=value`` in ``doc`` in place; the value is parsed as YAML."""
    key, sep, raw = spec.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {spec!r} is not KEY=VALUE")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"override {key!r} descends into a non-mapping")
        node = nxt
    node[parts[-1]] = value
    return doc


def default_document() -> dict:
    text = resources.files("hddpc").joinpath("default_config.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text) or {}


def load_config(path=None, overrides=(), seed: int | None = None) -> ToolConfig:
    """Read ``path`` (or the packaged defaults), apply overrides and the seed flag.

    Raises:
        ConfigError: Missing or unreadable file, bad YAML, or a failed validation.
    """
    if path is None:
        doc = default_document()
    else:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        doc = {} if doc is None else doc
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must hold a mapping")
    for spec in overrides:
        apply_override(doc, spec)
    if seed is not None:
        doc["seed"] = seed
    return from_dict(doc)


def to_dict(config: ToolConfig) -> dict:
    """Plain-data form, suitable for echoing into reports."""
    out = {"seed": config.seed}
    for name in SECTIONS:
        obj = getattr(config, name)
        out[name] = {k: _plain(getattr(obj, k)) for k in _allowed(name)}
    return out


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v
