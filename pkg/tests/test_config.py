import pytest

from latentplan.config import Config


def test_round_trip():
    cfg = Config(horizon=7, vae_lr=3e-4, sample_latents=True, eval_seed=12)
    assert Config.from_text(cfg.to_text()) == cfg


def test_comments_blank_lines_and_defaults():
    cfg = Config.from_text("# header\n\nhorizon = 5   # short\n")
    assert cfg.horizon == 5 and cfg.generations == Config().generations


def test_unknown_key_rejected():
    with pytest.raises(ValueError, match="unknown config key 'horizn'"):
        Config.from_text("horizn = 3\n")


def test_bad_value_rejected():
    with pytest.raises(ValueError, match="horizon"):
        Config.from_text("horizon = ten\n")


def test_missing_equals():
    with pytest.raises(ValueError, match="line 2"):
        Config.from_text("horizon = 3\ngenerations\n")


def test_bool_parsing():
    assert Config.from_text("sample_latents = true").sample_latents is True
    with pytest.raises(ValueError):
        Config.from_text("sample_latents = maybe")


def test_derived_configs():
    cfg = Config(horizon=4, latent_dim=6, tile_length=0.2)
    assert cfg.planner_config().horizon == 4
    assert cfg.model_dims().latent_dim == 6
    assert cfg.env_config().tile_length == 0.2


def test_from_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("generations = 3\n")
    assert Config.from_file(p).generations == 3
