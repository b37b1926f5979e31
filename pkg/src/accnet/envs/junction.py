"""Traffic-junction gridworld.

Four cars drive on two one-way roads (one lane each way, so four lanes total)
that cross near the center of an odd-sided grid. Each car follows a fixed
straight route from its entry cell to the opposite edge; on reaching the edge
it respawns at its entry as a fresh car. Actions are binary: gas (advance one
cell) or brake (hold). Cars move simultaneously; a cell holding two or more
cars afterwards counts as a collision, as does a same-step position swap.

Observations are strictly local: one-hot(own cell) concatenated with
one-hot(own heading), nothing about the other cars. The shared reward adds a
large penalty per collision and a small time penalty growing with each car's
age since arrival, so the equilibrium is staggered gassing through the
crossing region.

Default geometry (size 7, rows/cols 0-indexed): eastbound lane on row 4
entering at (4,0), westbound on row 3 entering at (3,6), southbound on column
3 entering at (0,3), northbound on column 4 entering at (6,4). The four lane
crossings are the cells (3,3), (3,4), (4,3), (4,4).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .. import errors

GAS, BRAKE = 0, 1
N_CARS = 4
COLLISION_REWARD = -10.0
TIME_REWARD_COEF = -0.01

DIRECTIONS = ("east", "west", "south", "north")


@dataclass
class CarState:
    direction: str
    route: list[tuple[int, int]]  # entry first, exit edge last
    index: int = 0  # position along route
    tau: int = 1  # timesteps since arrival, 1 on the arrival step

    @property
    def position(self) -> tuple[int, int]:
        return self.route[self.index]


def detect_collisions(positions) -> int:
    """Overlap count: sum over cells of (occupants - 1) where occupied twice+."""
    counts = Counter(tuple(p) for p in positions)
    return sum(c - 1 for c in counts.values() if c > 1)


def count_swaps(old_positions, new_positions) -> int:
    """Pairs of cars that exchanged cells in one simultaneous move."""
    swaps = 0
    n = len(old_positions)
    for i in range(n):
        for j in range(i + 1, n):
            if (tuple(old_positions[i]) == tuple(new_positions[j])
                    and tuple(old_positions[j]) == tuple(new_positions[i])
                    and tuple(old_positions[i]) != tuple(old_positions[j])):
                swaps += 1
    return swaps


def _build_routes(size: int) -> list[tuple[str, list[tuple[int, int]]]]:
    c = size // 2
    east = [(c + 1, col) for col in range(size)]
    west = [(c, col) for col in range(size - 1, -1, -1)]
    south = [(row, c) for row in range(size)]
    north = [(row, c + 1) for row in range(size - 1, -1, -1)]
    return [("east", east), ("west", west), ("south", south), ("north", north)]


class JunctionEnv:
    """Fixed 4-car crossing with gas/brake actions and shared reward."""

    kind = "discrete"

    def __init__(self, size: int = 7, horizon: int = 40,
                 random_respawn: bool = False, trace_path=None):
        if size < 3 or size % 2 == 0:
            raise errors.ConfigError(f"grid side must be odd and >= 3, got {size}")
        self.size = size
        self.horizon = horizon
        self.random_respawn = random_respawn
        self.trace_path = trace_path
        self.n_agents = N_CARS
        self.n_actions = 2
        self.obs_dim = size * size + len(DIRECTIONS)
        self.state_dims = [self.obs_dim] * N_CARS
        self.lanes = _build_routes(size)
        self.cars: list[CarState] = []
        self.t = 0
        self.failed = False
        self.last_overlaps = 0
        self._rng: np.random.Generator | None = None

    def _spawn(self, lane_idx: int) -> CarState:
        direction, route = self.lanes[lane_idx]
        return CarState(direction=direction, route=list(route))

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        self._rng = rng
        self.cars = [self._spawn(i) for i in range(N_CARS)]
        self.t = 0
        self.failed = False
        self.last_overlaps = 0
        return [self.encode_state(car) for car in self.cars]

    def encode_state(self, car: CarState) -> np.ndarray:
        """one-hot(cell) concat one-hot(heading); sees nothing of other cars."""
        vec = np.zeros(self.obs_dim)
        row, col = car.position
        vec[row * self.size + col] = 1.0
        vec[self.size * self.size + DIRECTIONS.index(car.direction)] = 1.0
        return vec

    def step(self, actions) -> tuple[list[np.ndarray], float, bool, bool]:
        if len(actions) != N_CARS:
            raise errors.ContractError(f"expected {N_CARS} actions, got {len(actions)}")
        old_positions = [car.position for car in self.cars]
        for i, act in enumerate(actions):
            act = int(act)
            if act not in (GAS, BRAKE):
                raise errors.ContractError(f"car {i}: action must be gas(0) or brake(1)")
            car = self.cars[i]
            if act == GAS:
                if car.index == len(car.route) - 1:
                    lane = int(self._rng.integers(0, N_CARS)) if self.random_respawn else i
                    self.cars[i] = self._spawn(lane)  # arrives with tau = 1
                else:
                    car.index += 1
        new_positions = [car.position for car in self.cars]
        overlaps = detect_collisions(new_positions) + count_swaps(old_positions, new_positions)
        self.last_overlaps = overlaps
        # reward sees each car's age as of this step; a fresh arrival counts 1
        reward = overlaps * COLLISION_REWARD + TIME_REWARD_COEF * sum(c.tau for c in self.cars)
        if overlaps > 0:
            self.failed = True
        for car in self.cars:
            car.tau += 1
        self.t += 1
        done = self.t >= self.horizon
        if self.trace_path is not None:
            with open(self.trace_path, "a") as fh:
                fh.write(json.dumps({
                    "t": self.t, "actions": [int(a) for a in actions],
                    "positions": [list(p) for p in new_positions], "overlaps": overlaps,
                }) + "\n")
        return [self.encode_state(car) for car in self.cars], reward, done, self.failed
