"""Canonical JSON, dataset files and CSV tables.

Canonical JSON has sorted keys, no whitespace and every float written with
17 significant digits, so equal inputs give byte-identical files and
doubles survive a round trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ConfigError
from .hankel import DatasetCollection, Trajectory, Transition

DATASET_SCHEMA = "hddpc-dataset/1"
TICK_COLUMNS = (
    "time", "com_x", "com_y", "vel_x", "vel_y", "cop_x", "cop_y",
    "stance_x", "stance_y", "tau", "domain", "perturb_active",
)


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = "%.17g" % x
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, out: list):
    if obj is None:
        out.append("null")
    elif obj is True or obj is False or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(format_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj, key=str)):
            if i:
                out.append(",")
            out.append(json.dumps(str(key)))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot encode {type(obj).__name__} as JSON")


def canonical_json(obj) -> str:
    out: list[str] = []
    _encode(obj, out)
    return "".join(out)


def write_json(obj, path) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def dataset_to_dict(data: DatasetCollection) -> dict:
    blocks = {"stance_L": [], "stance_R": [], "s2s_L2R": [], "s2s_R2L": []}
    for t in data.trajectories:
        blocks[f"stance_{t.stance_side}"].append(
            {
                "index": t.index,
                "duration": t.duration,
                "step_length": t.step_length.tolist(),
                "inputs": t.inputs.tolist(),
                "outputs": t.outputs.tolist(),
                "prev_inputs": None if t.prev_inputs is None else t.prev_inputs.tolist(),
                "prev_outputs": None if t.prev_outputs is None else t.prev_outputs.tolist(),
            }
        )
    for tr in data.transitions_chronological():
        blocks[f"s2s_{tr.direction}"].append(
            {
                "index": tr.index,
                "lambda": tr.step.tolist(),
                "T": tr.duration,
                "pre_impact_com": tr.pre_impact_com.tolist(),
            }
        )
    return {"schema": DATASET_SCHEMA, "delta_tau": data.delta_tau, "blocks": blocks}


def dataset_from_dict(doc: dict) -> DatasetCollection:
    """Inverse of ``dataset_to_dict``.

    Raises:
        ConfigError: Wrong schema tag or missing fields.
    """
    if not isinstance(doc, dict) or doc.get("schema") != DATASET_SCHEMA:
        raise ConfigError(f"not a {DATASET_SCHEMA} document")
    try:
        blocks = doc["blocks"]
        trajs = []
        for side in ("L", "R"):
            for t in blocks[f"stance_{side}"]:
                trajs.append(
                    Trajectory(
                        np.asarray(t["inputs"], dtype=float),
                        np.asarray(t["outputs"], dtype=float),
                        float(t["duration"]),
                        side,
                        np.asarray(t["step_length"], dtype=float),
                        None if t.get("prev_inputs") is None else np.asarray(t["prev_inputs"], dtype=float),
                        None if t.get("prev_outputs") is None else np.asarray(t["prev_outputs"], dtype=float),
                        index=int(t.get("index", 0)),
                    )
                )
        trajs.sort(key=lambda t: t.index)
        transitions = []
        for direction, side in (("L2R", "L"), ("R2L", "R")):
            for e in blocks[f"s2s_{direction}"]:
                transitions.append(
                    Transition(int(e["index"]), side, np.asarray(e["lambda"], dtype=float), float(e["T"]),
                               np.asarray(e["pre_impact_com"], dtype=float))
                )
        transitions.sort(key=lambda tr: tr.index)
        return DatasetCollection(trajs, transitions, delta_tau=float(doc["delta_tau"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed dataset document: {exc}") from exc


def write_dataset(data: DatasetCollection, path) -> None:
    write_json(dataset_to_dict(data), path)


def read_dataset(path) -> DatasetCollection:
    try:
        doc = read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    return dataset_from_dict(doc)


def write_csv(path, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def write_tick_csv(path, ticks) -> None:
    write_csv(path, TICK_COLUMNS, (tuple(t) for t in ticks))
