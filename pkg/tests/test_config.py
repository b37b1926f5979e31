import json

import pytest

from accnet.config import DEFAULTS, ExperimentConfig, parse_config
from accnet.envs import JunctionEnv, RoutingEnv
from accnet.errors import ConfigError
from accnet.models import ArchKind, CriticDesign


class TestDefaults:
    def test_routing_defaults_materialized(self):
        cfg = parse_config()
        doc = cfg.document
        assert doc["env"]["horizon"] == 30
        assert doc["hyper"]["gamma"] == 0.9
        assert doc["replay"]["mode"] == "cer"
        assert doc["out_dir"] is not None

    def test_junction_defaults(self):
        cfg = parse_config(overrides={"env": {"kind": "junction"}})
        doc = cfg.document
        assert doc["env"]["horizon"] == 40
        assert doc["hyper"]["gamma"] == 0.99
        assert doc["replay"]["mode"] == "none"
        assert doc["convergence"]["threshold"] == -0.5

    def test_echo_is_valid_json_with_no_sections_missing(self):
        echo = json.loads(parse_config().echo())
        assert set(echo) == set(DEFAULTS)
        for section in ("env", "hyper", "replay", "runs", "evaluation", "convergence"):
            assert set(echo[section]) == set(DEFAULTS[section])

    def test_empty_file_gives_defaults(self, tmp_path):
        path = tmp_path / "empty.json"
        path.write_text("")
        assert parse_config(path).document == parse_config().document

    def test_out_dir_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ACCNET_OUT_DIR", str(tmp_path / "results"))
        cfg = parse_config()
        assert cfg.out_dir == tmp_path / "results"


class TestValidation:
    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="wat"):
            parse_config(overrides={"wat": 1})

    def test_unknown_nested_key_names_dotted_path(self):
        with pytest.raises(ConfigError, match="hyper.learning_rate"):
            parse_config(overrides={"hyper": {"learning_rate": 0.1}})

    def test_bad_env_kind(self):
        with pytest.raises(ConfigError):
            parse_config(overrides={"env": {"kind": "maze"}})

    def test_bad_arch(self):
        with pytest.raises(ConfigError, match="architecture"):
            parse_config(overrides={"arch": {"kind": "transformer"}})

    def test_bad_critic_design(self):
        with pytest.raises(ConfigError, match="critic_design"):
            parse_config(overrides={"arch": {"critic_design": "local_only"}})

    def test_junction_with_replay_rejected_by_default(self):
        for mode in ("cer", "ceer"):
            with pytest.raises(ConfigError, match="unstable"):
                parse_config(overrides={"env": {"kind": "junction"},
                                        "replay": {"mode": mode}})

    def test_junction_replay_allowed_with_override(self):
        cfg = parse_config(overrides={"env": {"kind": "junction"},
                                      "replay": {"mode": "cer"},
                                      "allow_discrete_replay": True})
        assert cfg.replay_mode == "cer"

    def test_malformed_json_reports_path(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="broken.json"):
            parse_config(path)

    def test_section_must_be_object(self):
        with pytest.raises(ConfigError, match="hyper"):
            parse_config(overrides={"hyper": 3})

    def test_bad_runs(self):
        with pytest.raises(ConfigError):
            parse_config(overrides={"runs": {"n_runs": 0}})


class TestPrecedence:
    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"hyper": {"episodes": 100}}))
        cfg = parse_config(path, {"hyper": {"episodes": 200}})
        assert cfg.hyper.episodes == 200

    def test_arch_and_env_overrides(self):
        cfg = parse_config(overrides={"arch": {"kind": "a_ccnet_sha"},
                                      "env": {"kind": "routing", "topology": "fiveIE"}})
        assert cfg.arch is ArchKind.A_CCNET_SHA
        assert cfg.env_label == "routing:fiveIE"


class TestAccessors:
    def test_make_env_routing(self):
        env = parse_config().make_env()
        assert isinstance(env, RoutingEnv)
        assert env.horizon == 30

    def test_make_env_junction(self):
        cfg = parse_config(overrides={"env": {"kind": "junction", "size": 5}})
        env = cfg.make_env()
        assert isinstance(env, JunctionEnv)
        assert env.size == 5
        assert cfg.env_label == "junction:5"

    def test_model_config_carries_critic_design(self):
        cfg = parse_config(overrides={"arch": {"kind": "a_ccnet_sep",
                                               "critic_design": "signal_only"}})
        assert cfg.model_config.critic_design is CriticDesign.SIGNAL_ONLY

    def test_hyper_types(self):
        hyper = parse_config().hyper
        assert hyper.batch == 32
        assert hyper.clip_norm == 1.0

    def test_unknown_hyper_value_rejected_downstream(self):
        with pytest.raises(ConfigError):
            parse_config(overrides={"hyper": {"update_mode": "adagrad"}})
