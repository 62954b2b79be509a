"""Config defaults, merge semantics, and object construction."""

import json

import pytest

from latentalign import config
from latentalign.training import ModelBundle


def test_defaults_are_internally_consistent():
    cfg = config.default_config()
    bundle = config.bundle_from(cfg)
    assert isinstance(bundle, ModelBundle)
    assert bundle.grid.n == 16
    assert bundle.predictor_cfg.d % bundle.predictor_cfg.H == 0
    tc = config.train_config_from(cfg)
    assert tc.stage == "align" and tc.lr == 1e-3


def test_merge_rejects_unknown_keys():
    with pytest.raises(ValueError):
        config.merge(config.default_config(), {"learning_rate": 0.1})
    with pytest.raises(ValueError):
        config.merge(config.default_config(), {"train": {"momentum": 0.9}})


def test_merge_is_deep_and_nondestructive():
    base = config.default_config()
    out = config.merge(base, {"train": {"seed": 9}})
    assert out["train"]["seed"] == 9
    assert out["train"]["batch_size"] == base["train"]["batch_size"]
    assert base["train"]["seed"] == 0


def test_load_config_from_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"grid": {"rows": 3, "cols": 3},
                                "loss": {"distance": "smooth_l1"}}))
    cfg = config.load_config(path, overrides={"train": {"stage": "sft"}})
    assert cfg["grid"] == {"rows": 3, "cols": 3}
    assert cfg["loss"]["distance"] == "smooth_l1"
    assert cfg["train"]["stage"] == "sft"


def test_tap_layer_default_resolves_from_depth():
    cfg = config.default_config()
    bundle = config.bundle_from(cfg)
    L = cfg["predictor"]["L"]
    assert bundle.predictor_cfg.tap_layer == -(-L // 4)


def test_control_flag_builds_control_bundle():
    cfg = config.merge(config.default_config(), {"jepa": False})
    bundle = config.bundle_from(cfg)
    assert bundle.latent is None and bundle.tgt_encoder is None
