import json
from pathlib import Path

import pytest

from fedsim.config import config_from_dict, config_to_dict, echo_config, parse_config
from fedsim.errors import ConfigurationError

CONFIGS_DIR = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, payload):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(payload))
    return path


class TestParseConfig:
    def test_minimal_config_gets_standard_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, {"master_seed": 5}))
        assert cfg.n == 20
        assert cfg.s == 20
        assert cfg.master_seed == 5
        assert cfg.aggregator.rule == "fedavg"
        assert cfg.csft is None

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigurationError, match="unknown key.*clients"):
            parse_config(write(tmp_path, {"clients": 20}))

    def test_unknown_nested_key(self, tmp_path):
        with pytest.raises(ConfigurationError, match="attack.*unknown key.*strenght"):
            parse_config(write(tmp_path, {"attack": {"strenght": 2}}))

    def test_krum_constraint_cited(self, tmp_path):
        payload = {
            "m": 10,
            "aggregator": {"rule": "krum", "m_assumed": 10},
        }
        with pytest.raises(ConfigurationError, match="2m\\+2 < n"):
            parse_config(write(tmp_path, payload))

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError, match="malformed JSON"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parse_config(tmp_path / "nope.json")

    def test_partial_sections_merge_over_defaults(self, tmp_path):
        cfg = parse_config(write(tmp_path, {"csft": {"grad_clip": 5.0}}))
        assert cfg.csft.grad_clip == 5.0
        assert cfg.csft.total_epochs == 100  # untouched default

    def test_csft_null_means_absent(self, tmp_path):
        cfg = parse_config(write(tmp_path, {"csft": None}))
        assert cfg.csft is None

    def test_invalid_section_value(self, tmp_path):
        with pytest.raises(ConfigurationError):
            parse_config(write(tmp_path, {"aggregator": {"rule": "banana"}}))


class TestShippedConfigs:
    @pytest.mark.parametrize("path", sorted(CONFIGS_DIR.glob("*.json")), ids=lambda p: p.name)
    def test_parses_and_round_trips(self, path):
        cfg = parse_config(path)
        assert config_from_dict(json.loads(echo_config(cfg))) == cfg


class TestRoundTrip:
    def test_parse_echo_parse_is_identity(self, tmp_path):
        payload = {
            "m": 2,
            "total_rounds": 7,
            "aggregator": {"rule": "krum", "m_assumed": 2},
            "attack": {"kind": "adaptive_krum", "use_bisection": True},
            "csft": {"lr_max1": 0.3, "batch_size": 8},
            "data": {"partition": "dirichlet", "noise": 0.12},
        }
        cfg = parse_config(write(tmp_path, payload))
        echoed = echo_config(cfg)
        cfg2 = config_from_dict(json.loads(echoed))
        assert cfg == cfg2
        assert echo_config(cfg2) == echoed

    def test_dict_form_covers_every_field(self):
        cfg = config_from_dict({})
        d = config_to_dict(cfg)
        assert set(d) == {
            "n", "m", "s", "total_rounds", "master_seed", "model", "data",
            "trigger", "aggregator", "attack", "benign_train", "malicious_train",
            "csft",
        }
        assert d["model"]["hidden_dims"] == [64, 32]
