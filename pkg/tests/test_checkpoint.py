import json

import numpy as np
import pytest

from accnet.checkpoint import load_checkpoint, save_checkpoint
from accnet.envs import JunctionEnv, RoutingEnv, load_topology
from accnet.errors import CheckpointError, MissingComponentError
from accnet.models import ArchKind, EnvSpec, ModelConfig, build

SMALL = ModelConfig(actor_hidden=(8,), critic_hidden=(8,),
                    encoder_hidden=(4,), coordinator_hidden=(6,))


def make_model(kind, seed=0, discrete=False):
    env = JunctionEnv(size=5) if discrete else RoutingEnv(load_topology("twoIE"))
    return build(kind, EnvSpec.from_env(env), SMALL, np.random.default_rng(seed))


class TestRoundTrip:
    @pytest.mark.parametrize("kind", list(ArchKind))
    def test_parameters_bit_identical(self, kind, tmp_path):
        model = make_model(kind, seed=3)
        path = save_checkpoint(model, tmp_path / "ck.json")
        loaded = load_checkpoint(path)
        for name, net in model.unique_nets().items():
            np.testing.assert_array_equal(loaded.unique_nets()[name].flat, net.flat)

    def test_forward_bit_identical(self, tmp_path):
        model = make_model(ArchKind.A_CCNET_SEP, seed=4)
        path = save_checkpoint(model, tmp_path / "ck.json")
        loaded = load_checkpoint(path)
        rng = np.random.default_rng(0)
        states = [rng.normal(size=d) for d in model.env_spec.state_dims]
        for a, b in zip(model.act(states, np.random.default_rng(1)),
                        loaded.act(states, np.random.default_rng(1))):
            np.testing.assert_array_equal(a, b)

    def test_sha_aliasing_survives(self, tmp_path):
        model = make_model(ArchKind.A_CCNET_SHA)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "ck.json"))
        assert loaded.critics[0] is loaded.critics[1]


class TestCorruption:
    def test_truncated_file(self, tmp_path):
        model = make_model(ArchKind.IND)
        path = save_checkpoint(model, tmp_path / "ck.json")
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_tampered_value_fails_checksum(self, tmp_path):
        model = make_model(ArchKind.IND)
        path = save_checkpoint(model, tmp_path / "ck.json")
        doc = json.loads(path.read_text())
        doc["payload"]["nets"]["actor_0"][0] += 1.0
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path):
        from accnet import checkpoint as ck
        model = make_model(ArchKind.IND)
        path = save_checkpoint(model, tmp_path / "ck.json")
        doc = json.loads(path.read_text())
        doc["payload"]["version"] = 99
        doc["sha256"] = ck._digest(doc["payload"])
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.json")

    def test_renamed_net_detected(self, tmp_path):
        from accnet import checkpoint as ck
        model = make_model(ArchKind.IND)
        path = save_checkpoint(model, tmp_path / "ck.json")
        doc = json.loads(path.read_text())
        doc["payload"]["nets"]["actor_9"] = doc["payload"]["nets"].pop("actor_0")
        doc["sha256"] = ck._digest(doc["payload"])
        path.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match="mismatch"):
            load_checkpoint(path)


class TestActorsOnly:
    def test_accnet_actors_only_acts_without_channel(self, tmp_path):
        model = make_model(ArchKind.A_CCNET_SEP, seed=5)
        path = save_checkpoint(model, tmp_path / "actors.json", actors_only=True)
        loaded = load_checkpoint(path)
        assert loaded.critics is None
        assert loaded.channel is None
        rng = np.random.default_rng(2)
        states = [rng.normal(size=d) for d in model.env_spec.state_dims]
        full = model.act(states, np.random.default_rng(3))
        slim = loaded.act(states, np.random.default_rng(3))
        for a, b in zip(full, slim):
            np.testing.assert_array_equal(a, b)

    def test_accnet_actors_only_critic_pass_raises(self, tmp_path):
        model = make_model(ArchKind.A_CCNET_SHA, seed=6)
        loaded = load_checkpoint(
            save_checkpoint(model, tmp_path / "a.json", actors_only=True))
        states = [np.zeros(d) for d in model.env_spec.state_dims]
        actions = [np.array([0.5, 0.5]) for _ in range(2)]
        with pytest.raises(MissingComponentError):
            loaded.critic_pass(states, actions)

    def test_act_time_channel_arch_keeps_channel(self, tmp_path):
        model = make_model(ArchKind.AC_CNET, seed=7)
        loaded = load_checkpoint(
            save_checkpoint(model, tmp_path / "a.json", actors_only=True))
        assert loaded.channel is not None
        assert loaded.critics is None
        rng = np.random.default_rng(4)
        states = [rng.normal(size=d) for d in model.env_spec.state_dims]
        full = model.act(states, np.random.default_rng(5))
        slim = loaded.act(states, np.random.default_rng(5))
        for a, b in zip(full, slim):
            np.testing.assert_array_equal(a, b)

    def test_discrete_model_round_trip(self, tmp_path):
        model = make_model(ArchKind.FC_SHA, discrete=True)
        loaded = load_checkpoint(save_checkpoint(model, tmp_path / "d.json"))
        rng = np.random.default_rng(6)
        states = [rng.normal(size=d) for d in model.env_spec.state_dims]
        assert model.act(states, np.random.default_rng(7)) == \
            loaded.act(states, np.random.default_rng(7))
