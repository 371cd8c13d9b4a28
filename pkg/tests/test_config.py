import json

import pytest

from dynblock.config import ConfigError, RunConfig


def test_defaults_roundtrip(tmp_path):
    cfg = RunConfig()
    cfg.write(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg and back.hash() == cfg.hash()


def test_partial_override():
    cfg = RunConfig.from_dict({"decode": {"mode": "fixed", "c": 4}, "grpo": {"batches": 3}, "seed": 9})
    assert cfg.decode.mode == "fixed" and cfg.decode.c == 4 and cfg.decode.T == 8
    assert cfg.grpo.batches == 3 and cfg.seed == 9
    assert cfg.model.pretrain.steps == RunConfig().model.pretrain.steps
    assert cfg.hash() != RunConfig().hash()


@pytest.mark.parametrize("bad", [{"modle": {}}, {"decode": {"blocksize": 3}},
                                 {"model": {"pretrain": {"stepz": 1}}}, {"decode": {"mode": "zigzag"}},
                                 {"grpo": {"group_size": 1}}, {"task": 5}])
def test_rejects_bad_config(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_rejects_malformed_json(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.json")


def test_grpo_config_honours_ablation_flags():
    cfg = RunConfig.from_dict({"rewards": {"disable_ent": True, "disable_ind": True}})
    g = cfg.grpo_config()
    assert g.weights == (0.0, 0.0, 1.0)
    assert g.decode.mode == "dynamic" and g.decode.temperature == cfg.grpo.rollout_temperature
