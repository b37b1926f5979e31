"""Update rules and the per-episode training loop.

The two regimes follow the action space:

- discrete: stochastic softmax actors with V-critics. The critic descends on
  the squared TD error; each actor ascends along delta * grad log pi.
- continuous: deterministic simplex actors with Q-critics and slowly-blended
  target copies of critics + channel. Critics regress on y = r + gamma * Q'
  (targets frozen, next actions from the CURRENT actors); each actor chains
  dQ^i/da^i through its own policy only - other agents' actions are treated
  as constants, which is what the per-agent FD probes in the tests check.

Gradients are assembled into name -> flat-array dicts keyed like
``MultiAgentModel.unique_nets()``, so shared (sha) critics accumulate every
agent's contribution into one entry automatically. Critic gradients flow
through the coordinator channel into channel parameters; actor ops never
touch critic or channel parameters (the AC-CNet actor-to-channel push is a
separate op on the same forward quantities).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .models import ArchKind, MultiAgentModel
from .nets import GradRecord, Net, UpdateMode, apply_update, clip_global_norm, soft_update
from .replay import JointBuffer, JointExperience

LOGPROB_FLOOR = 1e-12


@dataclass
class Hyper:
    gamma: float = 0.9
    alpha_actor: float = 1e-3
    alpha_critic: float = 1e-2
    batch: int = 32
    episodes: int = 1500
    target_tau: float = 0.01
    update_mode: UpdateMode = UpdateMode.ADAM
    clip_norm: float | None = 1.0
    warmup: int = 64
    ceer_mix: float = 0.5
    ceer_per_step: bool = False
    channel_from_critic: bool = True  # AC-CNet: let critic grads shape the channel
    explore_start: float = 0.3
    explore_end: float = 0.0
    explore_frac: float = 0.6
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must be in [0,1), got {self.gamma}")
        if self.alpha_actor <= 0 or self.alpha_critic <= 0:
            raise ConfigError("learning rates must be positive")
        if self.batch < 1:
            raise ConfigError("batch must be at least 1")

    def explore_for(self, episode: int, mode: str) -> float:
        """Annealed Dirichlet weight (continuous) or fixed temperature (discrete)."""
        if mode == "discrete":
            return self.temperature
        span = max(1, int(self.explore_frac * self.episodes))
        frac = min(1.0, episode / span)
        return self.explore_start + frac * (self.explore_end - self.explore_start)


@dataclass
class EpisodeStats:
    episode: int
    steps: int
    episode_return: float
    mean_reward: float
    mean_abs_delta: float
    n_updates: int
    explore: float = 0.0
    failure: bool | None = None
    collisions: int | None = None
    final_max_u: float | None = None


# ---------------- TD errors ----------------

def td_error_v(r, gamma, v_next, v_now, done):
    """delta = r + gamma * v_next * (1 - done) - v_now."""
    r = np.asarray(r, dtype=np.float64)
    cont = 1.0 - np.asarray(done, dtype=np.float64)
    return r + gamma * np.asarray(v_next) * cont - np.asarray(v_now)


def td_error_q(r, gamma, q_next, q_now, done):
    """Returns (y, delta) with y = r + gamma * q_next * (1 - done)."""
    r = np.asarray(r, dtype=np.float64)
    cont = 1.0 - np.asarray(done, dtype=np.float64)
    y = r + gamma * np.asarray(q_next) * cont
    return y, y - np.asarray(q_now)


# ---------------- gradient assembly ----------------

def _batch_of(values) -> int:
    arr = np.asarray(values)
    return arr.shape[0] if arr.ndim else 1


def _accumulate(store: dict, name: str, flat: np.ndarray) -> None:
    if name in store:
        store[name] = store[name] + flat
    else:
        store[name] = flat


def _net_names(model: MultiAgentModel) -> dict[int, str]:
    return {id(net): name for name, net in model.unique_nets().items()}


def bootstrap_targets(value_model: MultiAgentModel, next_states, next_actions,
                      rewards, dones, gamma) -> list[np.ndarray]:
    """Per-agent regression targets y^i = r + gamma * value^i(s') * (1 - done)."""
    vals, _ = value_model.evaluate_critics(next_states, next_actions)
    return [td_error_q(rewards, gamma, v, 0.0, dones)[0] for v in vals]


def critic_gradients(model: MultiAgentModel, states, actions, targets,
                     channel_from_critic: bool = True,
                     ) -> tuple[dict[str, np.ndarray], list[np.ndarray], float]:
    """Descent gradients of sum_i mean_B 0.5 * (y^i - value^i)^2.

    Targets are constants (semi-gradient). Returns (grads, per-agent deltas,
    mean |delta|). Channel parameters receive gradients when the critics are
    wired through the channel; for AC-CNet that routing is optional.
    """
    names = _net_names(model)
    ev = model.critic_pass(states, actions)
    grads: dict[str, np.ndarray] = {}
    deltas, input_grads = [], []
    for i in range(model.n):
        delta = np.asarray(targets[i]) - ev.values[i]
        deltas.append(delta)
        b = _batch_of(delta)
        out_grad = np.asarray(-delta / b, dtype=np.float64)[..., None]
        rec = model.critics[i].backward(ev.tapes[i], out_grad)
        _accumulate(grads, names[id(model.critics[i])], rec.flat)
        input_grads.append(rec.input_grad)

    route_channel = model.kind.has_channel and (
        model.kind.is_accnet or channel_from_critic)
    if route_channel:
        signal_grads, message_grads = [], []
        any_message = False
        for i, lay in enumerate(model.layouts):
            s0, s1 = lay.signal
            signal_grads.append(input_grads[i][..., s0:s1])
            if lay.message is not None:
                m0, m1 = lay.message
                message_grads.append(input_grads[i][..., m0:m1])
                any_message = True
            else:
                message_grads.append(np.zeros_like(ev.channel_tape.messages[i]))
        enc_recs, coord_rec, _ = model.channel.route_gradients(
            ev.channel_tape, signal_grads,
            message_grads if any_message else None)
        _accumulate(grads, "coordinator", coord_rec.flat)
        for i, rec in enumerate(enc_recs):
            _accumulate(grads, f"encoder_{i}", rec.flat)

    mean_abs = float(np.mean([np.mean(np.abs(d)) for d in deltas]))
    return grads, deltas, mean_abs


def action_gradients(model: MultiAgentModel, states, actions) -> list[np.ndarray]:
    """dQ^i/da^i per agent, other agents' actions held fixed.

    Includes the direct critic-input path and, for A-CCNet, the channel path
    through the agent's own payload (and own message under signal_plus_local).
    """
    ev = model.critic_pass(states, actions)
    out = []
    for i in range(model.n):
        lay = model.layouts[i]
        b = _batch_of(ev.values[i])
        ones = np.ones_like(np.asarray(ev.values[i], dtype=np.float64))[..., None] / b
        rec = model.critics[i].backward(ev.tapes[i], ones)
        if lay.action is None:
            raise ContractError("action_gradients needs Q-mode critics")
        a0, a1 = lay.action
        grad = rec.input_grad[..., a0:a1].copy()
        if model.kind.is_accnet and lay.payload_action is not None:
            # channel path: only Q^i's own signal slice may carry gradient
            sig_grads = []
            msg_grads = []
            s0, s1 = lay.signal
            for j in range(model.n):
                if j == i:
                    sig_grads.append(rec.input_grad[..., s0:s1])
                else:
                    sig_grads.append(np.zeros_like(ev.channel_tape.signals[j]))
                if j == i and lay.message is not None:
                    m0, m1 = lay.message
                    msg_grads.append(rec.input_grad[..., m0:m1])
                else:
                    msg_grads.append(np.zeros_like(ev.channel_tape.messages[j]))
            _, _, payload_grads = model.channel.route_gradients(
                ev.channel_tape, sig_grads, msg_grads)
            p0, p1 = lay.payload_action
            grad = grad + payload_grads[i][..., p0:p1]
        out.append(grad)
    return out


def actor_gradients_deterministic(model: MultiAgentModel, states,
                                  ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Ascent gradients chaining dQ^i/da^i through actor i.

    Returns (actor grads, channel grads). The channel entry is non-empty only
    for AC-CNet, whose actors read coordinator signals; those gradients are
    applied by a separate op to keep actor updates from mutating the channel.
    """
    if model.mode != "continuous":
        raise ContractError("deterministic actor gradients need a continuous model")
    actor_inputs = model._actor_inputs(states)
    if model.kind.is_fc:
        joint, tape = model.actors[0].forward(actor_inputs[0])
        k = model.env_spec.action_dims[0]
        actions = [joint[..., i * k : (i + 1) * k] for i in range(model.n)]
    else:
        fwd = [model.actors[i].forward(actor_inputs[i]) for i in range(model.n)]
        actions = [f[0] for f in fwd]
        tapes = [f[1] for f in fwd]

    dq_da = action_gradients(model, states, actions)
    actor_grads: dict[str, np.ndarray] = {}
    channel_grads: dict[str, np.ndarray] = {}

    if model.kind.is_fc:
        k = model.env_spec.action_dims[0]
        out_grad = np.concatenate(dq_da, axis=-1)
        rec = model.actors[0].backward(tape, out_grad)
        actor_grads["actor"] = rec.flat
    else:
        input_recs = []
        for i in range(model.n):
            rec = model.actors[i].backward(tapes[i], dq_da[i])
            actor_grads[f"actor_{i}"] = rec.flat
            input_recs.append(rec)
        if model.kind is ArchKind.AC_CNET:
            d_sig = [
                rec.input_grad[..., model.env_spec.state_dims[i]:]
                for i, rec in enumerate(input_recs)
            ]
            enc_recs, coord_rec, _ = model.channel.route_gradients(
                model._act_channel_tape, d_sig)
            channel_grads["coordinator"] = coord_rec.flat
            for i, r in enumerate(enc_recs):
                channel_grads[f"encoder_{i}"] = r.flat
    return actor_grads, channel_grads


def actor_gradients_stochastic(model: MultiAgentModel, states, taken_actions,
                               deltas) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray], bool]:
    """Ascent gradients of sum_i mean_B delta^i * log pi^i(a^i | .).

    Returns (actor grads, channel grads for AC-CNet, underflow flag)."""
    if model.mode != "discrete":
        raise ContractError("stochastic actor gradients need a discrete model")
    actor_inputs = model._actor_inputs(states)
    clamped = False

    def logit_grad(pi, acts, delta):
        acts = np.asarray(acts)
        b = _batch_of(delta)
        onehot = np.zeros_like(pi)
        if pi.ndim == 1:
            onehot[int(acts)] = 1.0
        else:
            onehot[np.arange(pi.shape[0]), acts.astype(int)] = 1.0
        return (np.asarray(delta, dtype=np.float64)[..., None] * (onehot - pi)) / b

    actor_grads: dict[str, np.ndarray] = {}
    channel_grads: dict[str, np.ndarray] = {}
    if model.kind.is_fc:
        joint, tape = model.actors[0].forward(actor_inputs[0])
        k = model.env_spec.action_dims[0]
        pieces = []
        for i in range(model.n):
            pi = joint[..., i * k : (i + 1) * k]
            if np.any(np.take_along_axis(np.atleast_2d(pi),
                                         np.atleast_1d(taken_actions[i]).astype(int)[:, None],
                                         axis=-1) < LOGPROB_FLOOR):
                clamped = True
            pieces.append(logit_grad(pi, taken_actions[i], deltas[i]))
        rec = model.actors[0].backward(tape, np.concatenate(pieces, axis=-1), from_logits=True)
        actor_grads["actor"] = rec.flat
        return actor_grads, channel_grads, clamped

    input_recs = []
    for i in range(model.n):
        pi, tape = model.actors[i].forward(actor_inputs[i])
        chosen = np.take_along_axis(
            np.atleast_2d(pi),
            np.atleast_1d(taken_actions[i]).astype(int)[:, None], axis=-1)
        if np.any(chosen < LOGPROB_FLOOR):
            clamped = True
        rec = model.actors[i].backward(
            tape, logit_grad(pi, taken_actions[i], deltas[i]), from_logits=True)
        actor_grads[f"actor_{i}"] = rec.flat
        input_recs.append(rec)
    if model.kind is ArchKind.AC_CNET:
        d_sig = [
            rec.input_grad[..., model.env_spec.state_dims[i]:]
            for i, rec in enumerate(input_recs)
        ]
        enc_recs, coord_rec, _ = model.channel.route_gradients(
            model._act_channel_tape, d_sig)
        channel_grads["coordinator"] = coord_rec.flat
        for i, r in enumerate(enc_recs):
            channel_grads[f"encoder_{i}"] = r.flat
    return actor_grads, channel_grads, clamped


def apply_gradient_dict(model: MultiAgentModel, grads: dict[str, np.ndarray],
                        alpha: float, mode: UpdateMode, clip_norm: float | None,
                        ascend: bool) -> None:
    if not grads:
        return
    nets = model.unique_nets()
    if clip_norm is not None:
        clip_global_norm(list(grads.values()), clip_norm)
    for name, g in grads.items():
        net = nets[name]
        if mode is UpdateMode.ADAM:
            apply_update(net, -g if ascend else g, alpha, UpdateMode.ADAM)
        elif ascend:
            apply_update(net, g, alpha, UpdateMode.SGD_ASCENT)
        else:
            apply_update(net, g, alpha, UpdateMode.SGD_DESCENT)


# ---------------- single-net spec ops ----------------

def actor_update_stochastic(actor: Net, s, a: int, delta: float, alpha: float,
                            mode: UpdateMode = UpdateMode.SGD_ASCENT,
                            ) -> tuple[float, bool]:
    """One-net, one-sample policy-gradient ascent step.

    Returns (log pi(a|s) before the update, clamped flag)."""
    pi, tape = actor.forward(np.asarray(s, dtype=np.float64))
    onehot = np.zeros_like(pi)
    onehot[int(a)] = 1.0
    rec = actor.backward(tape, delta * (onehot - pi), from_logits=True)
    p = float(pi[int(a)])
    clamped = p < LOGPROB_FLOOR
    logp = float(np.log(max(p, LOGPROB_FLOOR)))
    if mode is UpdateMode.ADAM:
        apply_update(actor, -rec.flat, alpha, UpdateMode.ADAM)
    else:
        apply_update(actor, rec.flat, alpha, UpdateMode.SGD_ASCENT)
    return logp, clamped


def actor_update_deterministic(model: MultiAgentModel, states, alpha: float,
                               mode: UpdateMode = UpdateMode.SGD_ASCENT,
                               clip_norm: float | None = None) -> None:
    """Chain dQ^i/da^i through each actor; critics and channel untouched."""
    before = {name: net.flat.copy()
              for name, net in model.unique_nets().items() if "actor" not in name}
    actor_grads, _ = actor_gradients_deterministic(model, states)
    apply_gradient_dict(model, actor_grads, alpha, mode, clip_norm, ascend=True)
    for name, flat in before.items():
        if not np.array_equal(model.unique_nets()[name].flat, flat):
            raise ContractError(f"actor update touched {name}")


def critic_update(model: MultiAgentModel, states, actions, targets, alpha: float,
                  mode: UpdateMode = UpdateMode.SGD_DESCENT,
                  clip_norm: float | None = None,
                  channel_from_critic: bool = True) -> float:
    """Critic + channel descent on the squared TD error; returns mean |delta|."""
    grads, _, mean_abs = critic_gradients(model, states, actions, targets,
                                          channel_from_critic)
    apply_gradient_dict(model, grads, alpha, mode, clip_norm, ascend=False)
    return mean_abs


# ---------------- trainer ----------------

class Trainer:
    def __init__(self, model: MultiAgentModel, env, replay: JointBuffer, hyper: Hyper):
        if env.kind != model.mode:
            raise ConfigError(f"env kind {env.kind} does not match model mode {model.mode}")
        self.model = model
        self.env = env
        self.replay = replay
        self.hyper = hyper
        self.q_mode = model.mode == "continuous"
        self.target = model.copy() if self.q_mode else None
        self._episode_id = 0

    def _soft_update_targets(self) -> None:
        src = self.model.unique_nets()
        dst = self.target.unique_nets()
        for name in dst:
            if "actor" in name:
                continue
            soft_update(dst[name], src[name], self.hyper.target_tau)

    def _stack(self, batch: list[JointExperience]):
        n = self.model.n
        states = [np.stack([b.states[i] for b in batch]) for i in range(n)]
        next_states = [np.stack([b.next_states[i] for b in batch]) for i in range(n)]
        if self.q_mode:
            actions = [np.stack([np.asarray(b.actions[i], dtype=np.float64)
                                 for b in batch]) for i in range(n)]
        else:
            actions = [np.array([int(b.actions[i]) for b in batch]) for i in range(n)]
        rewards = np.array([b.reward for b in batch])
        dones = np.array([float(b.done) for b in batch])
        return states, actions, rewards, next_states, dones

    def _update(self, batch: list[JointExperience]) -> float:
        h = self.hyper
        states, actions, rewards, next_states, dones = self._stack(batch)
        if self.q_mode:
            next_actions = self.model.policy(next_states)
            ys = bootstrap_targets(self.target, next_states, next_actions,
                                   rewards, dones, h.gamma)
            cgrads, _, mean_abs = critic_gradients(
                self.model, states, actions, ys, h.channel_from_critic)
            apply_gradient_dict(self.model, cgrads, h.alpha_critic,
                                h.update_mode, h.clip_norm, ascend=False)
            agrads, chgrads = actor_gradients_deterministic(self.model, states)
            apply_gradient_dict(self.model, agrads, h.alpha_actor,
                                h.update_mode, h.clip_norm, ascend=True)
            apply_gradient_dict(self.model, chgrads, h.alpha_actor,
                                h.update_mode, h.clip_norm, ascend=True)
            self._soft_update_targets()
            return mean_abs
        # V-mode: bootstrap from the current critics
        v_next, _ = self.model.evaluate_critics(next_states)
        ys = [td_error_q(rewards, h.gamma, v, 0.0, dones)[0] for v in v_next]
        cgrads, deltas, mean_abs = critic_gradients(
            self.model, states, None, ys, h.channel_from_critic)
        apply_gradient_dict(self.model, cgrads, h.alpha_critic,
                            h.update_mode, h.clip_norm, ascend=False)
        agrads, chgrads, _ = actor_gradients_stochastic(
            self.model, states, actions, deltas)
        apply_gradient_dict(self.model, agrads, h.alpha_actor,
                            h.update_mode, h.clip_norm, ascend=True)
        apply_gradient_dict(self.model, chgrads, h.alpha_actor,
                            h.update_mode, h.clip_norm, ascend=True)
        return mean_abs

    def train_episode(self, rng: np.random.Generator, episode: int | None = None,
                      ) -> EpisodeStats:
        h = self.hyper
        ep = self._episode_id if episode is None else episode
        explore = h.explore_for(ep, self.model.mode)
        states = self.env.reset(rng)
        done = self.env.horizon == 0
        ep_return, steps, collisions = 0.0, 0, 0
        delta_sum, n_updates = 0.0, 0
        t = 0
        while not done:
            actions = self.model.act(states, rng, explore)
            result = self.env.step(actions)
            next_states, reward, done = result[0], result[1], result[2]
            exp = JointExperience(
                states=states, actions=actions, reward=reward,
                next_states=next_states, done=bool(done), t=t, episode_id=ep)
            self.replay.push_joint(exp)
            if self.replay.mode == "none":
                delta_sum += self._update([self.replay.pop_current()])
                n_updates += 1
            elif self.replay.mode == "cer":
                if len(self.replay) >= max(h.warmup, h.batch):
                    batch = self.replay.sample_cer(h.batch, rng)
                    delta_sum += self._update(batch)
                    n_updates += 1
            elif h.ceer_per_step and (self.replay.episode_scratch or len(self.replay)):
                batch = self.replay.sample_ceer(h.batch, h.ceer_mix, rng)
                delta_sum += self._update(batch)
                n_updates += 1
            if self.env.kind == "discrete" and self.env.last_overlaps:
                collisions += self.env.last_overlaps
            states = next_states
            ep_return += reward
            steps += 1
            t += 1
        if self.replay.mode == "ceer":
            if self.replay.episode_scratch or len(self.replay):
                batch = self.replay.sample_ceer(h.batch, h.ceer_mix, rng)
                delta_sum += self._update(batch)
                n_updates += 1
            self.replay.end_episode()
        self._episode_id = ep + 1
        stats = EpisodeStats(
            episode=ep, steps=steps, episode_return=ep_return,
            mean_reward=ep_return / steps if steps else 0.0,
            mean_abs_delta=delta_sum / n_updates if n_updates else 0.0,
            n_updates=n_updates, explore=explore)
        if self.env.kind == "discrete":
            stats.failure = bool(self.env.failed)
            stats.collisions = collisions
        else:
            stats.final_max_u = float(self.env.last_utilizations.max()) if steps else None
        return stats
