import dataclasses
import json

import pytest
import yaml

from hddpc import config as cfgmod
from hddpc.cli import main
from hddpc.errors import ConfigError
from hddpc.planner import HddpcConfig


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "d.json"
    assert main(["collect", "--out", str(path)]) == 0
    return path


def test_packaged_defaults_match_dataclasses():
    assert cfgmod.from_dict(cfgmod.default_document()) == cfgmod.ToolConfig()


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"hddpc": {"KK": 1}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"extra": {}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"plant": {"lip": {}}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"seed": "x"})


def test_invalid_values_rejected():
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"hddpc": {"duration_bounds": [1.2, 0.8]}})
    with pytest.raises(ConfigError):
        cfgmod.from_dict({"plant": "fast"})


def test_overrides():
    doc = {}
    cfgmod.apply_override(doc, "hddpc.K=1")
    cfgmod.apply_override(doc, "schedule.step_range=[0.1, 0.2]")
    cfg = cfgmod.from_dict(doc)
    assert cfg.hddpc.K == 1 and cfg.hddpc.J == 1
    assert cfg.schedule.step_range == (0.1, 0.2)
    with pytest.raises(ConfigError):
        cfgmod.apply_override({}, "hddpc.K")


def test_seed_and_lip_propagate(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump({"lip": {"z0": 0.8}}))
    cfg = cfgmod.load_config(path, ["hddpc.Q=[1, 1]"], seed=7)
    assert cfg.seed == 7 and cfg.plant.seed == 7
    assert cfg.plant.lip.z0 == 0.8
    assert cfg.hddpc == dataclasses.replace(HddpcConfig(), Q=(1.0, 1.0))


def test_collect_writes_four_blocks(dataset, capsys):
    doc = json.loads(dataset.read_text())
    assert doc["schema"] == "hddpc-dataset/1"
    assert set(doc["blocks"]) == {"stance_L", "stance_R", "s2s_L2R", "s2s_R2L"}
    assert len(doc["blocks"]["stance_L"]) == len(doc["blocks"]["stance_R"]) == 5


def test_collect_two_steps(tmp_path):
    out = tmp_path / "d.json"
    assert main(["collect", "--out", str(out), "--override", "schedule.steps=2"]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["blocks"]["stance_L"]) == len(doc["blocks"]["stance_R"]) == 1


def test_config_errors_exit_2(tmp_path):
    assert main(["collect", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "x.json")]) == 2
    assert main(["collect", "--override", "bogus.key=1", "--out", str(tmp_path / "x.json")]) == 2
    assert main(["simulate", "--arm", "ddpc", "--out", str(tmp_path / "r.json")]) == 2
    assert main(["simulate", "--arm", "hddpc", "--dataset", str(tmp_path / "none.json"),
                 "--out", str(tmp_path / "r.json")]) == 2


def test_collection_fall_exit_3(tmp_path):
    rc = main(["collect", "--out", str(tmp_path / "d.json"), "--override", "plant.fall_velocity_limit=0.05"])
    assert rc == 3


def test_simulate_hddpc_completes(dataset, tmp_path):
    out = tmp_path / "run.json"
    assert main(["simulate", "--dataset", str(dataset), "--arm", "hddpc", "--out", str(out),
                 "--override", "experiment.duration=4"]) == 0
    doc = json.loads(out.read_text())
    assert doc["outcome"] == "Completed"
    header = out.with_suffix(".csv").read_text().splitlines()[0]
    assert header == "time,com_x,com_y,vel_x,vel_y,cop_x,cop_y,stance_x,stance_y,tau,domain,perturb_active"


def test_simulate_nominal_falls_exit_4(tmp_path):
    rc = main(["simulate", "--arm", "nominal", "--out", str(tmp_path / "n.json"),
               "--override", "experiment.perturb=true", "--override", "experiment.magnitudes=[0.3, 0.4]"])
    assert rc == 4


def test_compare_shares_schedule(dataset, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--dataset", str(dataset), "--out", str(out),
                 "--override", "experiment.duration=2"]) == 0
    hashes = {json.loads((out / f"report_{arm}.json").read_text())["schedule_hash"]
              for arm in ("nominal", "ddpc", "hddpc")}
    assert len(hashes) == 1
    rows = (out / "summary.csv").read_text().splitlines()
    assert len(rows) == 4


def test_compare_seed_changes_schedule(dataset, tmp_path):
    hashes = []
    for seed in (1, 2):
        out = tmp_path / f"s{seed}"
        assert main(["compare", "--dataset", str(dataset), "--out", str(out), "--seed", str(seed),
                     "--override", "experiment.duration=1"]) == 0
        doc = json.loads((out / "comparison.json").read_text())
        assert doc["seed"] == seed
        hashes.append(doc["schedule_hash"])
    assert hashes[0] != hashes[1]


@pytest.mark.slow
def test_compare_speeds(dataset, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--dataset", str(dataset), "--out", str(out), "--speeds", "0.0,0.1,0.2",
                 "--override", "experiment.duration=1", "--override", "experiment.tracking_duration=3",
                 "--override", "experiment.window=2"]) == 0
    doc = json.loads((out / "tracking.json").read_text())
    assert [r["label"] for r in doc["rows"]] == ["0", "0.1", "0.2"]
