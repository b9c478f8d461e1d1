import pytest

from eventvid.config import (
    ConfigError,
    apply_overrides,
    config_hash,
    default_config,
    dumps_config,
    encoder_config,
    injection_set,
    load_config,
    loads_config,
    validate,
    write_config,
)


def test_defaults_validate():
    validate(default_config())


def test_round_trip(tmp_path):
    cfg = default_config()
    cfg["train.steps"] = 123
    write_config(cfg, tmp_path / "a.cfg")
    back = load_config(tmp_path / "a.cfg")
    assert back == cfg
    assert config_hash(back) == config_hash(cfg)


def test_parse_comments_and_values():
    cfg = loads_config("train.steps = 7  # short run\n\nbinning.polarity = \"concatenation\"\n")
    assert cfg["train.steps"] == 7
    assert cfg["binning.polarity"] == "concatenation"


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        loads_config("train.stepz = 7")
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["nope=1"])


def test_schema_version_enforced():
    with pytest.raises(ConfigError, match="schema"):
        loads_config("schema = 99")


def test_grid_alignment_checked():
    with pytest.raises(ConfigError, match="does not\n?\\s*match codec|does not match codec"):
        apply_overrides(default_config(), ["enc.spatial_strides=[2,2,1]"])
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["data.clip_len=10"])
    with pytest.raises(ConfigError):
        apply_overrides(default_config(), ["eval.lengths=[9,10]"])


def test_injection_set_expansion():
    cfg = default_config()
    assert injection_set(cfg) == frozenset({1, 2, 3, 4})
    assert injection_set({**cfg, "enc.injection_set": "first"}) == frozenset({1})
    assert injection_set({**cfg, "enc.injection_set": "middle"}) == frozenset({2})
    assert injection_set({**cfg, "enc.injection_set": "last"}) == frozenset({4})
    assert injection_set({**cfg, "enc.injection_set": "1,3"}) == frozenset({1, 3})
    with pytest.raises(ConfigError):
        validate({**cfg, "enc.injection_set": "9"})


def test_hash_changes_with_values():
    cfg = default_config()
    other = {**cfg, "train.seed": 1}
    assert config_hash(cfg) != config_hash(other)
    assert dumps_config(cfg) == dumps_config(dict(sorted(cfg.items())))


def test_encoder_config_tracks_polarity_channels():
    cfg = default_config()
    assert encoder_config(cfg).in_channels == 5
    concat = apply_overrides(cfg, ["binning.polarity=\"concatenation\""])
    assert encoder_config(concat).in_channels == 10
