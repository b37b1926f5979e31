"""Layered experiment configuration.

A config document is plain JSON with the section layout of ``DEFAULTS``.
Resolution order is flag overrides > file > defaults; every unset field is
materialized so the echoed document records each choice explicitly. A few
defaults depend on the environment kind (discount, horizon, replay mode)
and are filled in during resolution.
"""

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .envs import JunctionEnv, RoutingEnv, load_topology
from .models import ArchKind, CriticDesign, EnvSpec, ModelConfig, MultiAgentModel, build
from .replay import JointBuffer
from .training import Hyper, UpdateMode

DEFAULTS = {
    "env": {
        "kind": "routing",
        "topology": "twoIE",      # routing: builtin name or file path
        "size": 7,                # junction grid side
        "horizon": None,          # None: 30 routing, 40 junction
        "random_respawn": False,
    },
    "arch": {
        "kind": "a_ccnet_sep",
        "critic_design": None,    # None | signal_only | signal_plus_local
    },
    "model": {
        "actor_hidden": [64, 64],
        "critic_hidden": [64, 64],
        "encoder_hidden": [32],
        "coordinator_hidden": [64],
        "message_dim": 2,
        "signal_dim": 4,
    },
    "hyper": {
        "gamma": None,            # None: 0.9 routing, 0.99 junction
        "alpha_actor": 1e-3,
        "alpha_critic": 1e-2,
        "batch": 32,
        "episodes": 1500,
        "target_tau": 0.01,
        "update_mode": "adam",
        "clip_norm": 1.0,
        "warmup": 64,
        "ceer_mix": 0.5,
        "ceer_per_step": False,
        "channel_from_critic": True,
        "explore_start": 0.3,
        "explore_end": 0.0,
        "explore_frac": 0.6,
        "temperature": 1.0,
    },
    "replay": {
        "mode": None,             # None: cer routing, none junction
        "capacity": 100000,
    },
    "runs": {
        "n_runs": 10,
        "base_seed": 0,
    },
    "evaluation": {
        "episodes": 1000,
        "log_message_episodes": 3,
        # discrete policies stay stochastic when frozen; 0 forces argmax
        "temperature": 1.0,
    },
    "convergence": {
        "window": 50,
        "threshold": None,        # None: oracle-derived routing, -0.5 junction
        "margin": 0.05,
        "oracle_sample": 200,
        "oracle_seed": 999,
        "stop_early": True,
    },
    "out_dir": None,              # None: $ACCNET_OUT_DIR or ./runs
    "allow_discrete_replay": False,
}

_ENV_DEFAULTS = {
    "routing": {"horizon": 30, "gamma": 0.9, "replay": "cer"},
    "discrete": {"horizon": 40, "gamma": 0.99, "replay": "none"},
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where} must be a section, got {type(value).__name__}")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved experiment description.

    ``document`` is the materialized JSON-compatible dict; the typed fields
    below are parsed views of it.
    """

    document: dict = field(repr=False)
    arch: ArchKind = field(init=False)
    critic_design: CriticDesign | None = field(init=False)

    def __post_init__(self):
        doc = self.document
        object.__setattr__(self, "arch", ArchKind(doc["arch"]["kind"]))
        design = doc["arch"]["critic_design"]
        object.__setattr__(self, "critic_design",
                           CriticDesign(design) if design is not None else None)

    @property
    def env_kind(self) -> str:
        return self.document["env"]["kind"]

    @property
    def env_label(self) -> str:
        env = self.document["env"]
        if env["kind"] == "routing":
            return f"routing:{Path(str(env['topology'])).stem}"
        return f"junction:{env['size']}"

    @property
    def model_config(self) -> ModelConfig:
        m = self.document["model"]
        return ModelConfig(
            actor_hidden=tuple(m["actor_hidden"]),
            critic_hidden=tuple(m["critic_hidden"]),
            encoder_hidden=tuple(m["encoder_hidden"]),
            coordinator_hidden=tuple(m["coordinator_hidden"]),
            message_dim=m["message_dim"],
            signal_dim=m["signal_dim"],
            critic_design=self.critic_design,
        )

    @property
    def hyper(self) -> Hyper:
        h = dict(self.document["hyper"])
        h["update_mode"] = UpdateMode(h["update_mode"])
        return Hyper(**h)

    @property
    def replay_mode(self) -> str:
        return self.document["replay"]["mode"]

    @property
    def n_runs(self) -> int:
        return self.document["runs"]["n_runs"]

    @property
    def base_seed(self) -> int:
        return self.document["runs"]["base_seed"]

    @property
    def eval_episodes(self) -> int:
        return self.document["evaluation"]["episodes"]

    @property
    def log_message_episodes(self) -> int:
        return self.document["evaluation"]["log_message_episodes"]

    @property
    def eval_temperature(self) -> float:
        return self.document["evaluation"]["temperature"]

    @property
    def convergence(self) -> dict:
        return self.document["convergence"]

    @property
    def out_dir(self) -> Path:
        return Path(self.document["out_dir"])

    def make_env(self, trace_path=None):
        env = self.document["env"]
        if env["kind"] == "routing":
            return RoutingEnv(load_topology(env["topology"]), horizon=env["horizon"])
        return JunctionEnv(size=env["size"], horizon=env["horizon"],
                           random_respawn=env["random_respawn"],
                           trace_path=trace_path)

    def make_model(self, environment, rng: np.random.Generator) -> MultiAgentModel:
        return build(self.arch, EnvSpec.from_env(environment), self.model_config, rng)

    def make_buffer(self) -> JointBuffer:
        r = self.document["replay"]
        return JointBuffer(r["capacity"], r["mode"])

    def echo(self) -> str:
        return json.dumps(self.document, indent=2, sort_keys=True)


def _resolve(doc: dict) -> dict:
    env = doc["env"]
    if env["kind"] not in ("routing", "junction"):
        raise ConfigError(f"env.kind must be routing or junction, got {env['kind']!r}")
    mode_key = "routing" if env["kind"] == "routing" else "discrete"
    kind_defaults = _ENV_DEFAULTS[mode_key]

    if env["horizon"] is None:
        env["horizon"] = kind_defaults["horizon"]
    if doc["hyper"]["gamma"] is None:
        doc["hyper"]["gamma"] = kind_defaults["gamma"]
    if doc["replay"]["mode"] is None:
        doc["replay"]["mode"] = kind_defaults["replay"]
    if doc["out_dir"] is None:
        doc["out_dir"] = os.environ.get("ACCNET_OUT_DIR", "./runs")
    if doc["convergence"]["threshold"] is None and env["kind"] == "junction":
        doc["convergence"]["threshold"] = -0.5

    if env["kind"] == "junction" and doc["replay"]["mode"] in ("cer", "ceer") \
            and not doc["allow_discrete_replay"]:
        raise ConfigError(
            "replay mode "
            f"{doc['replay']['mode']!r} with a discrete env is unstable and "
            "off by default; set allow_discrete_replay to override")

    try:
        ArchKind(doc["arch"]["kind"])
    except ValueError:
        raise ConfigError(f"unknown architecture: {doc['arch']['kind']!r}") from None
    try:
        UpdateMode(doc["hyper"]["update_mode"])
    except ValueError:
        raise ConfigError(
            f"unknown hyper.update_mode: {doc['hyper']['update_mode']!r}") from None
    design = doc["arch"]["critic_design"]
    if design is not None:
        try:
            CriticDesign(design)
        except ValueError:
            raise ConfigError(f"unknown critic_design: {design!r}") from None

    for key in ("n_runs", "base_seed"):
        if not isinstance(doc["runs"][key], int) or (key == "n_runs" and doc["runs"][key] < 1):
            raise ConfigError(f"runs.{key} must be a positive integer")
    if doc["evaluation"]["episodes"] < 0:
        raise ConfigError("evaluation.episodes must be nonnegative")
    if doc["convergence"]["window"] < 1:
        raise ConfigError("convergence.window must be >= 1")
    return doc


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Load, merge, and fully resolve a configuration.

    ``path`` may be None (defaults only). ``overrides`` is a nested dict in
    the same layout, applied after the file. Unknown keys anywhere raise
    ConfigError with the offending dotted path.
    """
    doc = copy.deepcopy(DEFAULTS)
    if path is not None:
        text = Path(path).read_text()
        if text.strip():
            try:
                loaded = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: top level must be an object")
            doc = _merge(doc, loaded)
    if overrides:
        doc = _merge(doc, overrides)
    doc = _resolve(doc)
    cfg = ExperimentConfig(document=doc)
    cfg.hyper          # validates hyper ranges
    cfg.model_config
    return cfg
