"""Multi-agent actor-critic model assembly.

Six wirings over the same building blocks:

- ``ind``: per-agent actor and critic, local inputs only, no channel.
- ``fc_sep`` / ``fc_sha``: one joint actor over the concatenated full state
  emitting every agent's action through a group-wise softmax head; critics see
  the full state (and all actions in Q-mode), either one net per agent (sep)
  or one net aliased by all agents (sha).
- ``ac_cnet``: the channel runs at action time; each actor and critic reads
  its local state concatenated with its coordinator signal.
- ``a_ccnet_sep`` / ``a_ccnet_sha``: actors read ONLY local state, so
  execution needs zero channel calls; critics read the coordinator signal
  built from every agent's payload (state, plus action in Q-mode), optionally
  with the agent's own message appended (``signal_plus_local``).

Value heads follow the action space: discrete envs get V(s) critics and
stochastic softmax actors, continuous envs get Q(s, a) critics and
deterministic simplex actors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .channel import Channel, ChannelTape
from .errors import ConfigError, ContractError, MissingComponentError
from .nets import Activation, LayerSpec, Net, Tape


class ArchKind(str, Enum):
    IND = "ind"
    FC_SEP = "fc_sep"
    FC_SHA = "fc_sha"
    AC_CNET = "ac_cnet"
    A_CCNET_SEP = "a_ccnet_sep"
    A_CCNET_SHA = "a_ccnet_sha"

    @property
    def is_fc(self) -> bool:
        return self in (ArchKind.FC_SEP, ArchKind.FC_SHA)

    @property
    def is_accnet(self) -> bool:
        return self in (ArchKind.A_CCNET_SEP, ArchKind.A_CCNET_SHA)

    @property
    def shared_critic(self) -> bool:
        return self in (ArchKind.FC_SHA, ArchKind.A_CCNET_SHA)

    @property
    def has_channel(self) -> bool:
        return self is ArchKind.AC_CNET or self.is_accnet


class CriticDesign(str, Enum):
    SIGNAL_ONLY = "signal_only"
    SIGNAL_PLUS_LOCAL = "signal_plus_local"


@dataclass(frozen=True)
class EnvSpec:
    """Dims the model needs from an environment."""

    n_agents: int
    state_dims: tuple[int, ...]
    action_dims: tuple[int, ...]  # simplex size per agent, or action count
    mode: str  # "continuous" | "discrete"

    @classmethod
    def from_env(cls, env) -> "EnvSpec":
        if env.kind == "continuous":
            acts = tuple(env.action_dims)
        else:
            acts = tuple([env.n_actions] * env.n_agents)
        return cls(env.n_agents, tuple(env.state_dims), acts, env.kind)


@dataclass(frozen=True)
class ModelConfig:
    actor_hidden: tuple[int, ...] = (64, 64)
    critic_hidden: tuple[int, ...] = (64, 64)
    encoder_hidden: tuple[int, ...] = (32,)
    coordinator_hidden: tuple[int, ...] = (64,)
    message_dim: int = 2
    signal_dim: int = 4
    critic_design: CriticDesign | None = None  # A-CCNet only; None -> default


@dataclass(frozen=True)
class CriticLayout:
    """Where each piece sits in one agent's critic input vector."""

    in_dim: int
    state: tuple[int, int] | None = None
    signal: tuple[int, int] | None = None
    action: tuple[int, int] | None = None
    message: tuple[int, int] | None = None
    payload_action: tuple[int, int] | None = None  # within the channel payload


@dataclass
class CriticEval:
    """Everything the forward critic pass produced, kept for backward."""

    values: list[np.ndarray]
    inputs: list[np.ndarray]
    tapes: list[Tape]
    layouts: list[CriticLayout]
    channel_tape: ChannelTape | None = None
    payloads: list[np.ndarray] | None = None


def _mlp(in_dim: int, hidden: tuple[int, ...], out_dim: int, hidden_act: Activation,
         head: Activation, rng: np.random.Generator, groups: int = 1) -> Net:
    dims = [in_dim, *hidden]
    specs = [LayerSpec(dims[i], dims[i + 1], hidden_act) for i in range(len(dims) - 1)]
    specs.append(LayerSpec(dims[-1], out_dim, head, groups=groups))
    return Net.build(specs, rng)


class MultiAgentModel:
    def __init__(self, kind: ArchKind, env_spec: EnvSpec, config: ModelConfig,
                 actors: list[Net], critics: list[Net] | None,
                 channel: Channel | None, layouts: list[CriticLayout]):
        self.kind = kind
        self.env_spec = env_spec
        self.config = config
        self.actors = actors
        self.critics = critics
        self.channel = channel
        self.layouts = layouts
        self.n = env_spec.n_agents

    @property
    def mode(self) -> str:
        return self.env_spec.mode

    @property
    def critic_design(self) -> CriticDesign | None:
        return self.config.critic_design

    def unique_nets(self) -> dict[str, Net]:
        """Named parameter sets, sha aliases collapsed."""
        out: dict[str, Net] = {}
        if self.kind.is_fc:
            out["actor"] = self.actors[0]
        else:
            for i, a in enumerate(self.actors):
                out[f"actor_{i}"] = a
        if self.critics is not None:
            if self.kind.shared_critic:
                out["critic"] = self.critics[0]
            else:
                for i, c in enumerate(self.critics):
                    out[f"critic_{i}"] = c
        if self.channel is not None:
            for i, e in enumerate(self.channel.encoders):
                out[f"encoder_{i}"] = e
            out["coordinator"] = self.channel.coordinator
        return out

    @property
    def n_params(self) -> int:
        return sum(net.n_params for net in self.unique_nets().values())

    def execution_nets(self) -> dict[str, Net]:
        """The parameter sets act() touches (the deployment artifact)."""
        out: dict[str, Net] = {}
        if self.kind.is_fc:
            out["actor"] = self.actors[0]
        else:
            for i, a in enumerate(self.actors):
                out[f"actor_{i}"] = a
        if self.kind is ArchKind.AC_CNET:
            for i, e in enumerate(self.channel.encoders):
                out[f"encoder_{i}"] = e
            out["coordinator"] = self.channel.coordinator
        return out

    # ---------------- acting ----------------

    def _actor_inputs(self, states: list[np.ndarray]) -> list[np.ndarray]:
        if self.kind.is_fc:
            return [np.concatenate(states, axis=-1)]
        if self.kind is ArchKind.AC_CNET:
            if self.channel is None:
                raise MissingComponentError("ac_cnet cannot act without its channel")
            tape = self.channel.evaluate(list(states))
            self._act_channel_tape = tape  # kept for routing actor grads back
            return [np.concatenate([s, sig], axis=-1) for s, sig in zip(states, tape.signals)]
        return list(states)

    def policy(self, states: list[np.ndarray]) -> list[np.ndarray]:
        """Per-agent action distributions/simplexes, no exploration applied."""
        if len(states) != self.n:
            raise ContractError(f"expected {self.n} states, got {len(states)}")
        inputs = self._actor_inputs(states)
        if self.kind.is_fc:
            joint, _ = self.actors[0].forward(inputs[0])
            k = self.env_spec.action_dims[0]
            return [joint[..., i * k : (i + 1) * k] for i in range(self.n)]
        return [self.actors[i].forward(inputs[i])[0] for i in range(self.n)]

    def act(self, states: list[np.ndarray], rng: np.random.Generator,
            explore: float = 0.0) -> list:
        """Actions for one timestep.

        ``explore`` is the Dirichlet mixing weight for continuous actions and
        the softmax temperature for discrete ones (0 means greedy argmax).
        """
        if explore < 0:
            raise ContractError(f"explore must be nonnegative, got {explore}")
        pis = self.policy(states)
        if self.mode == "continuous":
            if explore == 0.0:
                return [pi.copy() for pi in pis]
            return [
                (1.0 - explore) * pi + explore * rng.dirichlet(np.ones(pi.shape[-1]))
                for pi in pis
            ]
        if explore == 0.0:
            return [int(np.argmax(pi)) for pi in pis]
        actions = []
        for pi in pis:
            if explore != 1.0:
                # temperature-scale in log space, renormalize
                logp = np.log(np.maximum(pi, 1e-300)) / explore
                logp -= logp.max()
                pi = np.exp(logp)
                pi = pi / pi.sum()
            actions.append(int(rng.choice(len(pi), p=pi / pi.sum())))
        return actions

    # ---------------- critic side ----------------

    def _require_critics(self):
        if self.critics is None:
            raise MissingComponentError("model has no critics (actors-only instance)")

    def _one_hot_actions(self, actions) -> list[np.ndarray]:
        out = []
        for i, a in enumerate(actions):
            k = self.env_spec.action_dims[i]
            if np.ndim(a) == 0:
                vec = np.zeros(k)
                vec[int(a)] = 1.0
            else:
                vec = np.asarray(a, dtype=np.float64)
            out.append(vec)
        return out

    def critic_pass(self, states: list[np.ndarray], actions=None) -> CriticEval:
        """Forward all critics (through the channel where wired)."""
        self._require_critics()
        if len(states) != self.n:
            raise ContractError(f"expected {self.n} states, got {len(states)}")
        q_mode = self.mode == "continuous"
        if q_mode and actions is None:
            raise ContractError("Q-mode critics need actions")
        acts = self._one_hot_actions(actions) if actions is not None else None

        channel_tape = None
        payloads = None
        if self.kind.has_channel:
            if self.kind is ArchKind.AC_CNET or not q_mode:
                payloads = list(states)
            else:
                payloads = [np.concatenate([s, a], axis=-1) for s, a in zip(states, acts)]
            channel_tape = self.channel.evaluate(payloads)

        inputs = []
        for i in range(self.n):
            parts = []
            if self.kind.is_fc:
                parts.append(np.concatenate(states, axis=-1))
                if q_mode:
                    parts.append(np.concatenate(acts, axis=-1))
            elif self.kind is ArchKind.IND:
                parts.append(states[i])
                if q_mode:
                    parts.append(acts[i])
            elif self.kind is ArchKind.AC_CNET:
                parts.append(states[i])
                parts.append(channel_tape.signals[i])
                if q_mode:
                    parts.append(acts[i])
            else:  # A-CCNet
                parts.append(channel_tape.signals[i])
                if q_mode:
                    parts.append(acts[i])
                if self.critic_design is CriticDesign.SIGNAL_PLUS_LOCAL:
                    parts.append(channel_tape.messages[i])
            inputs.append(np.concatenate(parts, axis=-1))

        values, tapes = [], []
        for i in range(self.n):
            out, tape = self.critics[i].forward(inputs[i])
            values.append(out[..., 0])
            tapes.append(tape)
        return CriticEval(values, inputs, tapes, self.layouts, channel_tape, payloads)

    def evaluate_critics(self, states: list[np.ndarray], actions=None,
                         ) -> tuple[list[np.ndarray], CriticEval]:
        ev = self.critic_pass(states, actions)
        return ev.values, ev

    def copy(self) -> "MultiAgentModel":
        """Deep copy with the same aliasing structure."""
        if self.kind.is_fc:
            actors = [self.actors[0].copy()]
        else:
            actors = [a.copy() for a in self.actors]
        critics = None
        if self.critics is not None:
            if self.kind.shared_critic:
                shared = self.critics[0].copy()
                critics = [shared] * self.n
            else:
                critics = [c.copy() for c in self.critics]
        channel = self.channel.copy() if self.channel is not None else None
        return MultiAgentModel(self.kind, self.env_spec, self.config,
                               actors, critics, channel, self.layouts)


def _critic_layout(kind: ArchKind, design: CriticDesign | None, env_spec: EnvSpec,
                   config: ModelConfig, agent: int) -> CriticLayout:
    d = env_spec.state_dims[agent]
    k = env_spec.action_dims[agent]
    g = config.signal_dim
    m = config.message_dim
    q_mode = env_spec.mode == "continuous"
    total_d = sum(env_spec.state_dims)
    total_k = sum(env_spec.action_dims)
    if kind.is_fc:
        if q_mode:
            off = total_d + sum(env_spec.action_dims[:agent])
            return CriticLayout(total_d + total_k, state=(0, total_d), action=(off, off + k))
        return CriticLayout(total_d, state=(0, total_d))
    if kind is ArchKind.IND:
        if q_mode:
            return CriticLayout(d + k, state=(0, d), action=(d, d + k))
        return CriticLayout(d, state=(0, d))
    if kind is ArchKind.AC_CNET:
        if q_mode:
            return CriticLayout(d + g + k, state=(0, d), signal=(d, d + g),
                                action=(d + g, d + g + k))
        return CriticLayout(d + g, state=(0, d), signal=(d, d + g))
    # A-CCNet
    parts = [("signal", g)]
    if q_mode:
        parts.append(("action", k))
    if design is CriticDesign.SIGNAL_PLUS_LOCAL:
        parts.append(("message", m))
    offsets, pos = {}, 0
    for name, width in parts:
        offsets[name] = (pos, pos + width)
        pos += width
    payload_action = (d, d + k) if q_mode else None
    return CriticLayout(pos, signal=offsets["signal"], action=offsets.get("action"),
                        message=offsets.get("message"), payload_action=payload_action)


def build(kind: ArchKind, env_spec: EnvSpec, config: ModelConfig | None = None,
          rng: np.random.Generator | None = None) -> MultiAgentModel:
    """Assemble a model; validates the architecture/env combination."""
    config = config or ModelConfig()
    rng = rng or np.random.default_rng(0)
    kind = ArchKind(kind)
    if env_spec.n_agents < 1:
        raise ConfigError("need at least one agent")
    if config.critic_design is not None and not kind.is_accnet:
        raise ConfigError(f"critic_design only applies to A-CCNet variants, not {kind.value}")
    design = config.critic_design
    if kind.is_accnet and design is None:
        design = CriticDesign.SIGNAL_PLUS_LOCAL
        config = replace(config, critic_design=design)

    q_mode = env_spec.mode == "continuous"
    hidden_act = Activation.ELU if q_mode else Activation.RELU
    n = env_spec.n_agents
    dims = env_spec.state_dims
    acts_k = env_spec.action_dims

    if kind.is_fc or kind.shared_critic:
        if len(set(acts_k)) != 1 or (kind.shared_critic and len(set(dims)) != 1):
            raise ConfigError(f"{kind.value} needs homogeneous agent dims")

    # actors
    if kind.is_fc:
        joint = _mlp(sum(dims), config.actor_hidden, sum(acts_k), hidden_act,
                     Activation.SOFTMAX, rng, groups=n)
        actors = [joint]
    else:
        extra = config.signal_dim if kind is ArchKind.AC_CNET else 0
        actors = [
            _mlp(dims[i] + extra, config.actor_hidden, acts_k[i], hidden_act,
                 Activation.SOFTMAX, rng)
            for i in range(n)
        ]

    # channel
    channel = None
    if kind.has_channel:
        if kind.is_accnet and q_mode:
            payload_dims = [dims[i] + acts_k[i] for i in range(n)]
        else:
            payload_dims = list(dims)
        encoders = [
            _mlp(payload_dims[i], config.encoder_hidden, config.message_dim,
                 hidden_act, Activation.TANH, rng)
            for i in range(n)
        ]
        coordinator = _mlp(n * config.message_dim, config.coordinator_hidden,
                           n * config.signal_dim, hidden_act, Activation.TANH, rng)
        channel = Channel(encoders, coordinator, config.message_dim, config.signal_dim)

    # critics
    layouts = [_critic_layout(kind, design, env_spec, config, i) for i in range(n)]
    if kind.shared_critic:
        shared = _mlp(layouts[0].in_dim, config.critic_hidden, 1, hidden_act,
                      Activation.IDENTITY, rng)
        critics = [shared] * n
    else:
        critics = [
            _mlp(layouts[i].in_dim, config.critic_hidden, 1, hidden_act,
                 Activation.IDENTITY, rng)
            for i in range(n)
        ]

    return MultiAgentModel(kind, env_spec, config, actors, critics, channel, layouts)
