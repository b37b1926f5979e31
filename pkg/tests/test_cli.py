import json

import pytest

from accnet.cli import main

TINY_MODEL = {"actor_hidden": [6], "critic_hidden": [6],
              "encoder_hidden": [4], "coordinator_hidden": [6]}


def tiny_file(tmp_path, **extra):
    doc = {
        "env": {"kind": "routing", "topology": "twoIE", "horizon": 3},
        "model": TINY_MODEL,
        "hyper": {"episodes": 4, "batch": 2, "warmup": 2},
        "evaluation": {"episodes": 3, "log_message_episodes": 1},
        "convergence": {"window": 2, "threshold": -10.0},
        "runs": {"n_runs": 1, "base_seed": 0},
    }
    doc.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


class TestTrain:
    def test_exit_zero_and_artifacts(self, tmp_path, capsys):
        cfg = tiny_file(tmp_path)
        out = tmp_path / "out"
        code = main(["train", "--config", str(cfg), "--arch", "ind",
                     "--out", str(out)])
        assert code == 0
        captured = capsys.readouterr().out
        assert "architecture" in captured and "ind" in captured
        assert (out / "config_echo.json").exists()
        assert (out / "aggregate_ind.json").exists()
        assert (out / "ind_s0" / "metrics.jsonl").exists()

    def test_flag_overrides_beat_file(self, tmp_path):
        cfg = tiny_file(tmp_path, runs={"n_runs": 3, "base_seed": 4})
        out = tmp_path / "out"
        code = main(["train", "--config", str(cfg), "--arch", "ind",
                     "--runs", "1", "--seed", "9", "--out", str(out)])
        assert code == 0
        assert (out / "ind_s9").exists()
        assert not (out / "ind_s4").exists()

    def test_out_dir_env_var_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ACCNET_OUT_DIR", str(tmp_path / "envout"))
        cfg = tiny_file(tmp_path)
        code = main(["train", "--config", str(cfg), "--arch", "ind"])
        assert code == 0
        assert (tmp_path / "envout" / "aggregate_ind.json").exists()

    def test_junction_with_replay_rejected(self, tmp_path, capsys):
        code = main(["train", "--env", "junction", "--replay", "cer",
                     "--out", str(tmp_path)])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_junction_replay_with_permission_flag(self, tmp_path):
        cfg = tiny_file(tmp_path)
        doc = json.loads(cfg.read_text())
        doc["env"] = {"kind": "junction", "size": 5, "horizon": 3}
        doc["hyper"] = {"episodes": 2, "batch": 2, "warmup": 2}
        doc["convergence"] = {"window": 2}
        cfg.write_text(json.dumps(doc))
        code = main(["train", "--config", str(cfg), "--arch", "ind",
                     "--replay", "cer", "--allow-discrete-replay",
                     "--out", str(tmp_path / "out")])
        assert code == 0

    def test_bad_env_flag(self, tmp_path, capsys):
        code = main(["train", "--env", "maze:3", "--out", str(tmp_path)])
        assert code == 2


class TestEvaluateAndTools:
    @pytest.fixture()
    def trained(self, tmp_path):
        cfg = tiny_file(tmp_path)
        out = tmp_path / "out"
        code = main(["train", "--config", str(cfg), "--arch", "a_ccnet_sep",
                     "--out", str(out)])
        assert code == 0
        return cfg, out

    def test_evaluate_checkpoint(self, trained, capsys):
        cfg, out = trained
        ck = out / "a_ccnet_sep_s0" / "checkpoint.json"
        code = main(["evaluate", "--config", str(cfg), "--checkpoint", str(ck),
                     "--eval-episodes", "2"])
        assert code == 0
        result = json.loads(capsys.readouterr().out)
        assert result["episodes"] == 2
        assert "mean_step_return" in result

    def test_evaluate_actors_only_checkpoint(self, trained, capsys):
        cfg, out = trained
        ck = out / "a_ccnet_sep_s0" / "checkpoint.actors.json"
        code = main(["evaluate", "--config", str(cfg), "--checkpoint", str(ck),
                     "--eval-episodes", "2"])
        assert code == 0

    def test_pca_subcommand(self, trained, tmp_path, capsys):
        _, out = trained
        messages = out / "a_ccnet_sep_s0" / "messages.csv"
        target = tmp_path / "proj.csv"
        code = main(["pca", "--messages", str(messages), "--out", str(target)])
        assert code == 0
        lines = target.read_text().splitlines()
        assert lines[0] == "x,y,agent_id,label"
        assert len(lines) > 1

    def test_tables_subcommand(self, trained, tmp_path, capsys):
        _, out = trained
        agg = out / "aggregate_a_ccnet_sep.json"
        payload_out = tmp_path / "tables.json"
        code = main(["tables", str(agg), "--out", str(payload_out)])
        assert code == 0
        assert "a_ccnet_sep" in capsys.readouterr().out
        assert "aggregates" in json.loads(payload_out.read_text())


class TestSweep:
    def test_all_architectures_one_env(self, tmp_path, capsys):
        cfg = tiny_file(tmp_path)
        out = tmp_path / "sweep"
        code = main(["sweep", "--config", str(cfg), "--out", str(out),
                     "--episodes", "2"])
        assert code == 0
        text = (out / "tables.txt").read_text()
        for arch in ("ind", "fc_sep", "fc_sha", "ac_cnet",
                     "a_ccnet_sep", "a_ccnet_sha"):
            assert arch in text
        payload = json.loads((out / "tables.json").read_text())
        assert len(payload["aggregates"]) == 6
