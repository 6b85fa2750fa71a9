import json

import pytest

from base.errors import ConfigError
from base.run_config import RESOLVED_CONFIG, RunConfig, load_run_config, parse_value, write_resolved_config


class TestParseValue:
    def test_json_scalars(self):
        assert parse_value("3") == 3
        assert parse_value("1e-3") == 1e-3
        assert parse_value("true") is True
        assert parse_value("null") is None

    def test_decade_range(self):
        assert parse_value("100..100000") == [100, 1000, 10000, 100000]

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            parse_value("a..b")
        with pytest.raises(ConfigError):
            parse_value("10..1")

    def test_comma_list(self):
        assert parse_value("1,2,4") == [1, 2, 4]
        assert parse_value("aot,time_warp") == ["aot", "time_warp"]

    def test_plain_string(self):
        assert parse_value("finetune-head") == "finetune-head"


class TestLoadRunConfig:
    def test_defaults(self):
        cfg = load_run_config()
        assert cfg.family == "finetune-all"
        assert cfg.net.feature_dim == 1024
        assert cfg.pretrain.tasks == ("aot", "permutation", "time_warp")

    def test_seed_reaches_seeded_sections(self):
        cfg = load_run_config(seed=5)
        assert cfg.seed == 5
        assert cfg.train.seed == 5
        assert cfg.synth.seed == 5

    def test_explicit_section_seed_wins(self):
        cfg = load_run_config(overrides=["train.seed=9"], seed=5)
        assert cfg.train.seed == 9
        assert cfg.synth.seed == 5

    def test_net_preset_with_override(self):
        cfg = load_run_config(overrides=["net=tiny", "net.feature_dim=32"])
        assert cfg.net.width_base == 8
        assert cfg.net.feature_dim == 32

    def test_nested_overrides(self):
        cfg = load_run_config(overrides=["ablate.subject_counts=1,2", "mask.noise_sigma=0.5", "pretrain.tasks=aot,time_warp"])
        assert cfg.ablate.subject_counts == (1, 2)
        assert cfg.mask.noise_sigma == 0.5
        assert cfg.pretrain.tasks == ("aot", "time_warp")

    def test_file_then_overrides_then_flags(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 1, "out": "a", "train": {"epochs": 3}}))
        cfg = load_run_config(path, overrides=["train.batch_size=16"], out="b")
        assert cfg.out == "b"
        assert cfg.train.epochs == 3 and cfg.train.batch_size == 16
        assert cfg.train.seed == 1

    @pytest.mark.parametrize(
        "overrides",
        [["net=huge"], ["no_such_key=1"], ["family=magic"], ["train.epochs=-1"], ["ablate.families=forest,magic"]],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ConfigError):
            load_run_config(overrides=overrides)

    def test_malformed_override(self):
        with pytest.raises(ConfigError, match="key=value"):
            load_run_config(overrides=["seed"])

    def test_override_into_scalar(self):
        with pytest.raises(ConfigError, match="not a section"):
            load_run_config(overrides=["seed=1", "seed.x=2"])

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(tmp_path / "missing.json")
        bad = tmp_path / "bad.json"
        bad.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            load_run_config(bad)


def test_resolved_config_round_trip(tmp_path):
    cfg = load_run_config(overrides=["net=tiny", "train.epochs=2"], seed=11)
    path = write_resolved_config(cfg, tmp_path / "run")
    assert path.name == RESOLVED_CONFIG
    again = RunConfig.model_validate(json.loads(path.read_text()))
    assert again == cfg
