from pathlib import Path

import pytest

from rocketland.config import RunConfig, apply_overrides, dump_config, load_config, parse_override

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_empty_config_is_complete(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path) == RunConfig()


def test_parse_override_nested_and_typed():
    assert parse_override("ppo.entropy_coef=0.01") == {"ppo": {"entropy_coef": 0.01}}
    assert parse_override("env.incremental=true") == {"env": {"incremental": True}}
    assert parse_override("ppo.hidden=[32, 32]") == {"ppo": {"hidden": [32, 32]}}
    with pytest.raises(ValueError):
        parse_override("seed")


def test_overrides_coerce_to_field_types():
    cfg = load_config(None, ["ppo.lr=1", "ppo.hidden=[32, 32, 32]", "total_steps=1e6", "guide.kind=checkpoint:a=b.npz"])
    assert cfg.ppo.lr == 1.0 and isinstance(cfg.ppo.lr, float)
    assert cfg.ppo.hidden == (32, 32, 32)
    assert cfg.total_steps == 1_000_000 and isinstance(cfg.total_steps, int)
    assert cfg.guide.kind == "checkpoint:a=b.npz"


def test_unknown_keys_rejected():
    with pytest.raises(KeyError):
        load_config(None, ["ppo.nope=1"])
    with pytest.raises(KeyError):
        load_config(None, ["init.center.w=1"])
    with pytest.raises(TypeError):
        load_config(None, ["ppo=3"])


def test_extends_and_override_precedence(tmp_path):
    (tmp_path / "base.yaml").write_text("seed: 4\nppo:\n  lr: 0.001\n")
    (tmp_path / "child.yaml").write_text("extends: base.yaml\nppo:\n  clip: 0.1\n")
    cfg = load_config(tmp_path / "child.yaml", ["seed=9"])
    assert (cfg.seed, cfg.ppo.lr, cfg.ppo.clip) == (9, 0.001, 0.1)


def test_partial_dict_override_keeps_other_entries():
    cfg = load_config(None, ["init.half_range.x=0"])
    assert cfg.init.half_range["x"] == 0.0 and cfg.init.half_range["z"] == 500.0


def test_apply_overrides_does_not_mutate():
    base = RunConfig()
    new = apply_overrides(base, {"seed": 3})
    assert base.seed == 0 and new.seed == 3


def test_dump_round_trip(tmp_path):
    cfg = load_config(None, ["ppo.hidden=[16, 8]", "schedule.variant=jsrl_random"])
    path = tmp_path / "c.yaml"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


@pytest.mark.parametrize("name", ["published", "desk", "ppo", "ppo-track", "ppo-jsrl", "ppo-rajs", "ppo-rajs-s"])
def test_shipped_presets_load(name):
    load_config(CONFIGS / f"{name}.yaml")


def test_benchmark_presets_differ_only_where_intended():
    desk = load_config(CONFIGS / "desk.yaml")
    assert load_config(CONFIGS / "ppo.yaml").schedule.variant == "none"
    assert load_config(CONFIGS / "ppo-track.yaml").reward.mode == "track"
    assert load_config(CONFIGS / "ppo-jsrl.yaml").schedule.variant == "jsrl_random"
    rajs = load_config(CONFIGS / "ppo-rajs.yaml")
    assert rajs.ppo == desk.ppo and rajs.schedule == desk.schedule
    s = load_config(CONFIGS / "ppo-rajs-s.yaml")
    assert s.env.incremental and s.ppo.smoothness_coef > 0
