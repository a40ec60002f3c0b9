import json

import pytest

from mirrornet.config import (
    ConfigError,
    CurriculumConfig,
    RunConfig,
    apply_overrides,
    build,
    load_config,
    parse_override,
    save_config,
)


def test_defaults():
    cfg = RunConfig()
    c = cfg.curriculum
    assert c.lr == 1e-3 and c.lam == 0.01 and c.grad_clip == 5.0 and c.desk_factor == 0.1
    assert c.epochs(c.alpha_epochs) == 10 and c.epochs(c.image_vae_epochs) == 20 and c.window == 1
    assert c.epochs(0) == 0 and c.epochs(1) == 1
    assert cfg.net.alpha_variance == 0.01 and cfg.net.theta_variance == 1.0 and cfg.net.phi_variance == 1.0


def test_overrides_and_coercion():
    cfg = load_config(overrides=["curriculum.alpha_epochs=7", "net.image_size=[64, 48]", "net.latent_size=[4,3]",
                                 "curriculum.desk_factor=1", "data.synthetic.pixel_noise=0"], seed=3)
    assert cfg.seed == 3 and cfg.curriculum.alpha_epochs == 7
    assert cfg.net.image_size == (64, 48) and cfg.net.heatmap_size == (16, 12)
    assert isinstance(cfg.curriculum.desk_factor, float) and cfg.data.synthetic.pixel_noise == 0.0


@pytest.mark.parametrize("override,match", [
    ("curriculum.alpha_epoch=3", "unknown config key"),
    ("nets.width=3", "unknown config key"),
    ("curriculum.alpha_epochs=three", "integer"),
    ("curriculum.baseline=1", "true/false"),
    ("curriculum.semi_composition=[10,10]", "sum to batch_size"),
    ("curriculum.alpha_epochs=-1", "nonnegative"),
    ("novalue", "key=value"),
    ("net.width.x=1", "integer"),
    ("curriculum.clip_scope=layer", "clip_scope"),
])
def test_bad_configs_rejected(override, match):
    with pytest.raises(ConfigError, match=match):
        load_config(overrides=[override])


def test_files_roundtrip(tmp_path):
    cfg = load_config(overrides=["curriculum.semi_composition=[8,8]", "seed=5"])
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == cfg and again.hash() == cfg.hash()
    (tmp_path / "c.json").write_text(json.dumps({"curriculum": {"lam": 0.5}}))
    assert load_config(tmp_path / "c.json").curriculum.lam == 0.5
    (tmp_path / "bad.yaml").write_text("a: [")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_hash_tracks_content():
    assert RunConfig().hash() == RunConfig().hash()
    assert RunConfig().hash() != load_config(overrides=["seed=1"]).hash()


def test_parse_and_apply():
    assert parse_override("a.b=[1, 2]") == (["a", "b"], [1, 2])
    raw = apply_overrides({"a": {"c": 1}}, ["a.b=2"])
    assert raw == {"a": {"c": 1, "b": 2}}
    assert build(CurriculumConfig, {"supervised_epochs": [3, 4]}).supervised_epochs == (3, 4)
