from __future__ import annotations

import json

import pytest

from shotpref.cli import main
from shotpref.config import PipelineConfig, bundled_config_path, config_from_dict, load_config
from shotpref.errors import ConfigError, MissingArtifact
from shotpref.pipeline import ARTIFACTS, STAGES, Pipeline, run_stage
from shotpref.storage import read_jsonl

TINY = bundled_config_path("tiny")


def tiny_dict() -> dict:
    with open(TINY, encoding="utf-8") as fh:
        return json.load(fh)


# -- configuration -------------------------------------------------------------

def test_bundled_configs_load():
    desk = load_config(bundled_config_path("desk"))
    assert desk == PipelineConfig(name="desk")
    assert desk.dpo.beta == 0.1 and desk.dpo.candidates == 8 and desk.scorer.strategy == "cyclic"
    assert desk.dataset.count == 2000 and desk.eval.heldout_prompts == 200
    assert load_config(TINY).name == "tiny"


def test_config_json_round_trip():
    cfg = load_config(TINY)
    assert config_from_dict(json.loads(cfg.to_json())) == cfg
    assert cfg.replace("dpo.beta", 0.5).dpo.beta == 0.5


def test_unknown_field_names_its_path():
    data = tiny_dict()
    data["dpo"]["bogus"] = 1
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == "dpo.bogus"


@pytest.mark.parametrize("path,value,field", [
    (("dpo", "beta"), -1.0, "dpo.beta"),
    (("dpo", "beta"), "high", "dpo.beta"),
    (("scorer", "strategy"), "vibes", "scorer.strategy"),
    (("dataset", "count"), 10, "dataset.count"),
    (("version",), 7, "version"),
])
def test_invalid_values_are_rejected(path, value, field):
    data = tiny_dict()
    node = data
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == field


def test_missing_version_and_remote_endpoint():
    data = tiny_dict()
    del data["version"]
    with pytest.raises(ConfigError):
        config_from_dict(data)
    data = tiny_dict()
    data["scorer"]["strategy"] = "remote"
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert err.value.field == "scorer.remote_endpoint"


# -- stage plumbing ------------------------------------------------------------

def test_every_artifact_has_a_producing_stage():
    assert set(ARTIFACTS.values()) <= set(STAGES)


def test_stage_without_inputs_names_the_missing_stage(tmp_path):
    with pytest.raises(MissingArtifact) as err:
        run_stage(load_config(TINY), "dpo", tmp_path)
    assert err.value.stage in STAGES and err.value.path in ARTIFACTS


def test_synth_then_out_of_order_stage(tmp_path):
    cfg = load_config(TINY)
    run_stage(cfg, "synth", tmp_path)
    train = read_jsonl(tmp_path / "data" / "train.jsonl")
    assert len(train) == cfg.dataset.count
    assert len(read_jsonl(tmp_path / "data" / "heldout.jsonl")) == cfg.eval.heldout_prompts
    with pytest.raises(MissingArtifact) as err:
        run_stage(cfg, "sample", tmp_path)
    assert err.value.stage == "pretrain"


def test_runs_cover_ablations_and_sweep():
    names = [r.name for r in Pipeline(load_config(bundled_config_path("desk"))).runs()]
    assert names[0] == "dpo"
    assert "ablation_tag_beta0.1" in names and "ablation_regression_beta0.1" in names
    assert {"ablation_cyclic_beta0.01", "ablation_cyclic_beta0.5", "ablation_cyclic_beta0.9"} <= set(names)


# -- command line --------------------------------------------------------------

def test_cli_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    data = tiny_dict()
    data["model"]["colour"] = "blue"
    bad.write_text(json.dumps(data))
    assert main(["synth", "--config", str(bad), "--out", str(tmp_path / "a")]) == 1
    assert "model.colour" in capsys.readouterr().err
    assert main(["dpo", "--config", "tiny", "--out", str(tmp_path / "b")]) == 2
    assert "MissingArtifact" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exit_info:
        main(["train", "--config", "tiny"])
    assert exit_info.value.code == 1
    assert main(["synth", "--config", "tiny", "--out", str(tmp_path / "c"), "--seed-override", "3"]) == 0
    saved = json.loads((tmp_path / "c" / "config.json").read_text())
    assert set(saved["seeds"].values()) == {3}


# -- full tiny run -------------------------------------------------------------

def test_tiny_run_writes_every_artifact(tiny_runs):
    out = tiny_runs[0]
    for rel in ARTIFACTS:
        assert (out / rel).exists(), rel
    report = json.loads((out / "eval" / "report.json").read_text())
    assert {"reference", "pretrain", "dpo"} <= set(report["reports"])
    for rep in report["reports"].values():
        assert 0 <= rep["precision"] <= 1 and 0 <= rep["coverage"] <= 1 and rep["fcd"] >= 0
    assert report["reports"]["reference"]["fcd"] < 1e-6
    assert "Method" in (out / "eval" / "report.txt").read_text()


def test_tiny_runs_are_byte_identical(tiny_runs):
    a, b = tiny_runs
    for rel in ("eval/report.json", "pairs/pairs.jsonl", "checkpoints/dpo.ckpt", "data/train.jsonl"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
