"""Joint-experience replay with three modes.

``cer`` stores every timestep's joint experience in a FIFO ring and samples
uniformly with replacement, so each drawn item carries all agents' records
from one and the same timestep. ``ceer`` parks the in-flight episode in a
scratch list and only merges it into the ring at episode end; sampling then
mixes fresh episode items with ring items at a configurable fraction.
``none`` keeps nothing beyond the current transition, for pure on-policy
updates.

Alignment is structural: a JointExperience is one timestep's tuple for all N
agents, so no batch can interleave agents across timesteps within one item.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ProtocolError

MODES = ("cer", "ceer", "none")


@dataclass
class JointExperience:
    """All N agents' records from a single timestep, plus shared reward."""

    states: list[np.ndarray]
    actions: list[np.ndarray]
    reward: float
    next_states: list[np.ndarray]
    done: bool
    t: int
    episode_id: int = 0

    @property
    def n_agents(self) -> int:
        return len(self.states)


class JointBuffer:
    """Ring of timestep-aligned joint experiences with an episode scratch."""

    def __init__(self, capacity: int, mode: str = "cer", n_agents: int | None = None):
        if mode not in MODES:
            raise ProtocolError(f"unknown replay mode {mode!r}, expected one of {MODES}")
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.capacity = int(capacity)
        self.mode = mode
        self.n_agents = n_agents
        self.entries: list[JointExperience] = []
        self.episode_scratch: list[JointExperience] = []
        self._pos = 0  # next ring slot to overwrite once full
        self._current: JointExperience | None = None  # mode "none" only

    def __len__(self) -> int:
        return len(self.entries)

    def _validate(self, exp: JointExperience) -> None:
        n = exp.n_agents
        if self.n_agents is None:
            self.n_agents = n
        if n != self.n_agents:
            raise ContractError(f"joint experience has {n} agents, buffer expects {self.n_agents}")
        if not (len(exp.actions) == len(exp.next_states) == n):
            raise ContractError("fragmentary experience: per-agent lists differ in length")

    def push_joint(self, exp: JointExperience) -> None:
        self._validate(exp)
        if self.mode == "none":
            self._current = exp
            return
        if self.mode == "ceer":
            self.episode_scratch.append(exp)
            return
        self._push_ring(exp)

    def _push_ring(self, exp: JointExperience) -> None:
        if len(self.entries) < self.capacity:
            self.entries.append(exp)
        else:
            self.entries[self._pos] = exp
            self._pos = (self._pos + 1) % self.capacity

    def pop_current(self) -> JointExperience:
        """Mode ``none``: hand the pending transition over and forget it."""
        if self.mode != "none":
            raise ProtocolError("pop_current is only valid in mode 'none'")
        if self._current is None:
            raise ContractError("no pending transition")
        exp, self._current = self._current, None
        return exp

    def end_episode(self) -> None:
        """Migrate the CEER scratch into the main ring (no-op in other modes)."""
        for exp in self.episode_scratch:
            self._push_ring(exp)
        self.episode_scratch.clear()

    def sample_cer(self, batch_size: int, rng: np.random.Generator) -> list[JointExperience]:
        if not self.entries:
            raise ContractError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self.entries), size=batch_size)
        return [self.entries[i] for i in idx]

    def sample_ceer(self, batch_size: int, mix: float, rng: np.random.Generator) -> list[JointExperience]:
        """Episode-weighted batch drawn before the scratch is migrated."""
        if not 0.0 <= mix <= 1.0:
            raise ContractError(f"mix fraction must be in [0,1], got {mix}")
        if not self.episode_scratch and not self.entries:
            raise ContractError("cannot sample: episode scratch and ring both empty")
        n_ep = math.ceil(mix * batch_size)
        if not self.entries:
            n_ep = batch_size
        elif not self.episode_scratch:
            n_ep = 0
        batch = []
        if n_ep:
            idx = rng.integers(0, len(self.episode_scratch), size=n_ep)
            batch.extend(self.episode_scratch[i] for i in idx)
        if batch_size - n_ep:
            idx = rng.integers(0, len(self.entries), size=batch_size - n_ep)
            batch.extend(self.entries[i] for i in idx)
        return batch

    def dump(self, path) -> None:
        """JSON-lines debug dump of the ring contents, oldest first."""
        ordered = self.entries[self._pos:] + self.entries[:self._pos] \
            if len(self.entries) == self.capacity else self.entries
        with open(path, "w") as fh:
            for exp in ordered:
                fh.write(json.dumps({
                    "episode_id": exp.episode_id,
                    "t": exp.t,
                    "reward": exp.reward,
                    "done": exp.done,
                    "states": [np.asarray(s).tolist() for s in exp.states],
                    "actions": [np.asarray(a).tolist() for a in exp.actions],
                    "next_states": [np.asarray(s).tolist() for s in exp.next_states],
                }) + "\n")
