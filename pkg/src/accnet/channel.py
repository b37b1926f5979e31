"""The coordinator communication channel.

Each agent owns a small encoder net that compresses its local payload into a
fixed, low-dimensional message. The coordinator net consumes all N messages
(concatenated in agent order) and emits one global signal per agent, sliced
from its output. Because every piece is an ordinary differentiable net, the
"protocol" - what the messages mean - is shaped end to end by whatever
gradients the critics and actors push back through the channel.

Only the m-dimensional message vectors cross the agent boundary; raw local
state never does. ``Channel.calls`` counts every encoder/coordinator forward,
which is how execution-time independence of the channel-free architectures is
asserted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ProtocolError, ShapeError
from .nets import GradRecord, Net, Tape


@dataclass
class Message:
    values: np.ndarray  # shape (m,) or (B, m)
    agent_id: int


@dataclass
class GlobalSignal:
    values: np.ndarray  # shape (g,) or (B, g)
    agent_id: int


class ChannelTape:
    """Forward caches from one encode-all + coordinate round."""

    __slots__ = ("encoder_tapes", "coordinator_tape", "messages", "signals")

    def __init__(self, encoder_tapes: list[Tape], coordinator_tape: Tape,
                 messages: list[np.ndarray], signals: list[np.ndarray]):
        self.encoder_tapes = encoder_tapes
        self.coordinator_tape = coordinator_tape
        self.messages = messages
        self.signals = signals


class Channel:
    """Per-agent encoders plus one coordinator with per-agent output slices."""

    def __init__(self, encoders: list[Net], coordinator: Net, message_dim: int, signal_dim: int):
        n = len(encoders)
        if n == 0:
            raise ShapeError("channel needs at least one encoder")
        for enc in encoders:
            if enc.out_dim != message_dim:
                raise ShapeError(f"encoder emits {enc.out_dim}, message_dim is {message_dim}")
        if coordinator.in_dim != n * message_dim:
            raise ShapeError(f"coordinator in_dim {coordinator.in_dim} != N*m = {n * message_dim}")
        if coordinator.out_dim != n * signal_dim:
            raise ShapeError(f"coordinator out_dim {coordinator.out_dim} != N*g = {n * signal_dim}")
        self.encoders = encoders
        self.coordinator = coordinator
        self.message_dim = message_dim
        self.signal_dim = signal_dim
        self.n_agents = n
        self.calls = 0

    def copy(self) -> "Channel":
        return Channel([e.copy() for e in self.encoders], self.coordinator.copy(),
                       self.message_dim, self.signal_dim)

    @property
    def nets(self) -> list[Net]:
        return self.encoders + [self.coordinator]

    def encode_local(self, agent_id: int, payload: np.ndarray) -> tuple[Message, Tape]:
        """Compress one agent's local payload into its m-dim message."""
        self.calls += 1
        values, tape = self.encoders[agent_id].forward(payload)
        return Message(values, agent_id), tape

    def coordinate(self, messages: list[Message]) -> tuple[list[GlobalSignal], Tape]:
        """All N messages in, one g-dim signal per agent out."""
        if len(messages) != self.n_agents:
            raise ProtocolError(f"expected {self.n_agents} messages, got {len(messages)}")
        ids = [m.agent_id for m in messages]
        if ids != list(range(self.n_agents)):
            raise ProtocolError(f"messages must arrive in agent order 0..N-1, got {ids}")
        self.calls += 1
        joined = np.concatenate([m.values for m in messages], axis=-1)
        out, tape = self.coordinator.forward(joined)
        g = self.signal_dim
        signals = [GlobalSignal(out[..., i * g : (i + 1) * g], i) for i in range(self.n_agents)]
        return signals, tape

    def evaluate(self, payloads: list[np.ndarray]) -> ChannelTape:
        """Full round: encode every payload, coordinate, keep all tapes."""
        if len(payloads) != self.n_agents:
            raise ProtocolError(f"expected {self.n_agents} payloads, got {len(payloads)}")
        msgs, enc_tapes = [], []
        for i, p in enumerate(payloads):
            msg, tape = self.encode_local(i, p)
            msgs.append(msg)
            enc_tapes.append(tape)
        signals, coord_tape = self.coordinate(msgs)
        return ChannelTape(enc_tapes, coord_tape,
                           [m.values for m in msgs], [s.values for s in signals])

    def route_gradients(self, tape: ChannelTape, signal_grads: list[np.ndarray],
                        message_grads: list[np.ndarray] | None = None,
                        ) -> tuple[list[GradRecord], GradRecord, list[np.ndarray]]:
        """Reverse-mode pass for sum_i signal_i . signal_grads[i].

        ``message_grads`` adds direct gradient w.r.t. each message (for critics
        that consume the local message alongside the signal). Returns per-encoder
        grad records, the coordinator grad record, and per-agent payload grads.
        """
        if tape.coordinator_tape.net_id != id(self.coordinator):
            raise ContractError("channel tape was produced by a different channel")
        if len(signal_grads) != self.n_agents:
            raise ProtocolError(f"expected {self.n_agents} signal grads, got {len(signal_grads)}")
        joined = np.concatenate([np.asarray(g, dtype=np.float64) for g in signal_grads], axis=-1)
        coord_rec = self.coordinator.backward(tape.coordinator_tape, joined)
        m = self.message_dim
        encoder_recs, payload_grads = [], []
        for i, enc in enumerate(self.encoders):
            out_grad = coord_rec.input_grad[..., i * m : (i + 1) * m]
            if message_grads is not None:
                out_grad = out_grad + message_grads[i]
            rec = enc.backward(tape.encoder_tapes[i], out_grad)
            encoder_recs.append(rec)
            payload_grads.append(rec.input_grad)
        return encoder_recs, coord_rec, payload_grads
