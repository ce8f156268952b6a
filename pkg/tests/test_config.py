"""Config schema, defaults, overrides, and round-trips."""

import json

import pytest

from restorkit.config import (
    Config,
    config_digest,
    from_dict,
    load_config,
    save_config,
    to_dict,
)
from restorkit.errors import ConfigError


class TestDefaults:
    def test_reference_operating_point(self):
        cfg = Config()
        assert cfg.prompts.style_dim == 768
        assert cfg.prompts.deg_dim == 256
        assert cfg.vae.z_channels == 4
        assert cfg.vae.downs == 2
        assert cfg.schedule.timesteps == 1000
        assert cfg.schedule.beta_start == 1e-4
        assert cfg.schedule.beta_end == 2e-2
        assert cfg.stage1.lambda_deg == 1.0
        assert cfg.stage1.lambda_rec == 1.0
        assert cfg.stage2.lambda_per == 0.1
        assert cfg.stage2.lambda_adv == 0.001
        assert cfg.stage1.lr == 1e-5
        assert cfg.stage1.batch_size == 16

    def test_defaults_from_empty(self):
        assert load_config(None) == Config()


class TestValidation:
    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match="invalid"):
            from_dict({"optimizer": {"lr": 1}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="stage1"):
            from_dict({"stage1": {"momentum": 0.9}})

    def test_wrong_type_rejected(self):
        with pytest.raises(ConfigError):
            from_dict({"stage1": {"epochs": "lots"}})

    def test_int_promoted_to_float(self):
        cfg = from_dict({"stage1": {"lr": 1}})
        assert cfg.stage1.lr == 1.0
        assert isinstance(cfg.stage1.lr, float)

    def test_list_becomes_tuple(self):
        cfg = from_dict({"unet": {"channel_mults": [1, 2, 4]}})
        assert cfg.unet.channel_mults == (1, 2, 4)


class TestOverrides:
    def test_override_applies(self):
        cfg = load_config(None, ["stage1.lr=0.001", "data.per_kind=5"])
        assert cfg.stage1.lr == 0.001
        assert cfg.data.per_kind == 5

    def test_override_yaml_scalars(self):
        cfg = load_config(None, ["control.dmb_enabled=false"])
        assert cfg.control.dmb_enabled is False
        cfg = load_config(None, ["unet.channel_mults=[1, 2]"])
        assert cfg.unet.channel_mults == (1, 2)

    def test_override_beats_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("stage1:\n  epochs: 3\n")
        cfg = load_config(p, ["stage1.epochs=7"])
        assert cfg.stage1.epochs == 7

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, ["stage1.lr"])
        with pytest.raises(ConfigError):
            load_config(None, ["lr=0.1"])
        with pytest.raises(ConfigError):
            load_config(None, ["a.b.c=1"])

    def test_override_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, ["stage1.bogus=1"])


class TestFiles:
    def test_yaml_roundtrip(self, tmp_path):
        cfg = load_config(None, ["vae.epochs=2", "embeddings.dim=32"])
        p = tmp_path / "cfg.yaml"
        save_config(cfg, p)
        assert load_config(p) == cfg

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "no.yaml")

    def test_invalid_yaml(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("a: [unclosed\n")
        with pytest.raises(ConfigError, match="YAML"):
            load_config(p)

    def test_non_mapping_rejected(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("- 1\n- 2\n")
        with pytest.raises(ConfigError, match="mapping"):
            load_config(p)


class TestDigest:
    def test_digest_stable_and_sensitive(self):
        a = config_digest(Config())
        b = config_digest(Config())
        assert a == b
        c = config_digest(load_config(None, ["stage1.lr=0.002"]))
        assert c != a

    def test_digest_is_canonical_json(self):
        d = json.loads(config_digest(Config()))
        assert d == to_dict(Config())
