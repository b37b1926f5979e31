import json

import numpy as np
import pytest

from accnet.config import parse_config
from accnet.envs import load_topology
from accnet.errors import ConfigError
from accnet.harness import (
    RunRecord,
    aggregate,
    detect_convergence,
    routing_threshold,
    run_experiment,
)


class TestDetectConvergence:
    def test_constant_series_at_threshold_converges_at_window(self):
        flag, episode = detect_convergence([0.5] * 80, window=50, threshold=0.5)
        assert flag and episode == 50

    def test_below_threshold_never_converges(self):
        flag, episode = detect_convergence([0.49] * 500, window=50, threshold=0.5)
        assert not flag and episode is None

    def test_step_series_converges_within_one_window(self):
        e0 = 120
        series = [0.0] * e0 + [1.0] * 200
        flag, episode = detect_convergence(series, window=50, threshold=0.9)
        assert flag and e0 < episode <= e0 + 50

    def test_window_one_is_first_crossing(self):
        flag, episode = detect_convergence([0.1, 0.2, 0.9, 0.1], window=1, threshold=0.5)
        assert flag and episode == 3

    def test_short_series_not_converged(self):
        assert detect_convergence([1.0] * 10, window=50, threshold=0.0) == (False, None)

    def test_bad_window(self):
        with pytest.raises(ConfigError):
            detect_convergence([1.0], window=0, threshold=0.0)


class TestRoutingThreshold:
    def test_two_ie_matches_closed_form(self):
        # optimal max utilization is (F1+F2)/30, so its mean is 13/30
        theta = routing_threshold(load_topology("twoIE"))
        assert abs(theta - (1.0 - 13.0 / 30.0 - 0.05)) < 0.02

    def test_cached_and_deterministic(self):
        topo = load_topology("fiveIE")
        assert routing_threshold(topo) == routing_threshold(topo)


def tiny_config(tmp_path, **over):
    base = {
        "env": {"kind": "routing", "topology": "twoIE", "horizon": 3},
        "arch": {"kind": "ind"},
        "model": {"actor_hidden": [6], "critic_hidden": [6],
                  "encoder_hidden": [4], "coordinator_hidden": [6]},
        "hyper": {"episodes": 6, "batch": 2, "warmup": 2},
        "evaluation": {"episodes": 4, "log_message_episodes": 2},
        "convergence": {"window": 3, "threshold": -10.0},
        "out_dir": str(tmp_path),
    }
    for key, value in over.items():
        if isinstance(value, dict):
            base.setdefault(key, {}).update(value)
        else:
            base[key] = value
    return parse_config(overrides=base)


class TestRunExperiment:
    def test_artifacts_and_early_stop(self, tmp_path):
        cfg = tiny_config(tmp_path)
        record = run_experiment(cfg, seed=0, run_dir=tmp_path / "r0")
        assert record.error is None
        # threshold -10 is crossed as soon as the window fills
        assert record.converged and record.convergence_episode == 3
        assert record.episodes_trained == 3
        assert record.eval_episodes == 4
        assert record.eval_max_u is not None and record.oracle_gap is not None
        assert set(record.mlu) == {"L1", "L2", "L3"}
        for name in ("metrics.jsonl", "aggregate.json", "messages.csv",
                     "pca.csv", "checkpoint.json"):
            assert (tmp_path / "r0" / name).exists(), name
        lines = (tmp_path / "r0" / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == 3
        assert json.loads(lines[0])["episode"] == 0

    def test_zero_episodes(self, tmp_path):
        cfg = tiny_config(tmp_path, hyper={"episodes": 0})
        record = run_experiment(cfg, seed=0, run_dir=tmp_path / "r0")
        assert record.returns == [] and not record.converged
        assert record.error is None

    def test_rerun_is_bit_identical(self, tmp_path):
        cfg = tiny_config(tmp_path, convergence={"threshold": 10.0})
        run_experiment(cfg, seed=5, run_dir=tmp_path / "a")
        run_experiment(cfg, seed=5, run_dir=tmp_path / "b")
        for name in ("metrics.jsonl", "messages.csv", "checkpoint.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes(), name

    def test_crash_recorded_not_raised(self, tmp_path, monkeypatch):
        from accnet import harness

        def boom(self, rng, episode=None):
            raise RuntimeError("scripted failure")

        monkeypatch.setattr(harness.Trainer, "train_episode", boom)
        cfg = tiny_config(tmp_path)
        record = run_experiment(cfg, seed=0, run_dir=tmp_path / "r0")
        assert record.error == "RuntimeError: scripted failure"
        assert not record.converged
        summary = json.loads((tmp_path / "r0" / "aggregate.json").read_text())
        assert summary["error"] == record.error

    def test_accnet_acts_without_channel_and_logs_messages(self, tmp_path):
        cfg = tiny_config(tmp_path, arch={"kind": "a_ccnet_sep"})
        record = run_experiment(cfg, seed=1, run_dir=tmp_path / "r1")
        assert record.error is None
        assert record.act_channel_calls == 0
        lines = (tmp_path / "r1" / "messages.csv").read_text().splitlines()
        assert lines[0].startswith("run,episode,t,agent_id,kind")
        assert len(lines) > 1  # logging pass captured channel traffic
        kinds = {line.split(",")[4] for line in lines[1:]}
        assert kinds == {"message", "signal"}
        assert (tmp_path / "r1" / "checkpoint.actors.json").exists()
        pca_lines = (tmp_path / "r1" / "pca.csv").read_text().splitlines()
        assert pca_lines[0] == "x,y,agent_id,label"
        assert len(pca_lines) > 1

    def test_act_time_channel_arch_counts_calls(self, tmp_path):
        cfg = tiny_config(tmp_path, arch={"kind": "ac_cnet"})
        record = run_experiment(cfg, seed=1, run_dir=tmp_path / "r2")
        assert record.error is None
        assert record.act_channel_calls > 0

    def test_no_channel_arch_writes_header_only_logs(self, tmp_path):
        cfg = tiny_config(tmp_path, arch={"kind": "fc_sep"})
        record = run_experiment(cfg, seed=0, run_dir=tmp_path / "r3")
        assert record.error is None
        assert len((tmp_path / "r3" / "messages.csv").read_text().splitlines()) == 1

    def test_junction_run_records_failures(self, tmp_path):
        cfg = parse_config(overrides={
            "env": {"kind": "junction", "size": 5, "horizon": 4},
            "arch": {"kind": "ind"},
            "model": {"actor_hidden": [6], "critic_hidden": [6],
                      "encoder_hidden": [4], "coordinator_hidden": [6]},
            "hyper": {"episodes": 3},
            "evaluation": {"episodes": 5, "log_message_episodes": 0},
            "convergence": {"window": 2},
            "out_dir": str(tmp_path),
        })
        record = run_experiment(cfg, seed=0, run_dir=tmp_path / "j0")
        assert record.error is None
        assert record.failures is not None
        assert record.failure_rate == record.failures / 5
        assert record.mlu is None

    def test_ceer_replay_run(self, tmp_path):
        cfg = tiny_config(tmp_path, replay={"mode": "ceer"}, hyper={"batch": 2})
        record = run_experiment(cfg, seed=2, run_dir=tmp_path / "r4")
        assert record.error is None


class TestAggregate:
    def make(self, converged, mlu=None, gap=None, failures=None, evals=0):
        r = RunRecord(seed=0, architecture="ind", env="routing:twoIE",
                      threshold=0.5, window=50)
        r.converged = converged
        r.convergence_episode = 10 if converged else None
        r.mlu = mlu
        r.oracle_gap = gap
        r.failures = failures
        r.eval_episodes = evals
        return r

    def test_cr_ratio(self):
        records = [self.make(True, {"L1": 0.4}, 0.02),
                   self.make(True, {"L1": 0.6}, 0.04),
                   self.make(False)]
        agg = aggregate(records)
        assert abs(agg.cr - 2 / 3) < 1e-12
        assert abs(agg.mlu["L1"] - 0.5) < 1e-12
        assert abs(agg.oracle_gap - 0.03) < 1e-12

    def test_zero_converged_mlu_absent(self):
        agg = aggregate([self.make(False), self.make(False)])
        assert agg.cr == 0.0 and agg.mlu is None and agg.oracle_gap is None

    def test_failure_rate_pooled(self):
        records = [self.make(True, failures=30, evals=500),
                   self.make(True, failures=20, evals=500)]
        agg = aggregate(records)
        assert abs(agg.fr - 0.05) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            aggregate([])

    def test_mixed_architectures_rejected(self):
        a = self.make(True)
        b = self.make(True)
        b.architecture = "fc_sep"
        with pytest.raises(ConfigError):
            aggregate([a, b])

    def test_cr_times_runs_is_integer(self):
        records = [self.make(i % 3 != 0) for i in range(10)]
        agg = aggregate(records)
        assert abs(agg.cr * agg.n_runs - round(agg.cr * agg.n_runs)) < 1e-12
