"""Network traffic-engineering environment.

A topology is a set of capacitated links plus ingress-egress (IE) pairs, each
with K fixed candidate paths. One agent per pair chooses, every step, how to
split its demand across its paths (a point on the K-simplex). Link load is
the sum of all flow fractions routed over it; utilization is load over
capacity; the shared reward is 1 minus the worst utilization, so all agents
are paid for keeping the single most loaded link as idle as possible.

An agent only sees its own demand and the links on its own paths, each link
contributing the triple (U, max(0, 1-U), max(0, U-1)): utilization, headroom,
and overflow. Utilizations shown are from the previous step; demands are
redrawn per episode and held fixed within it.

Two optimality oracles are provided: an exhaustive simplex-grid search (exact
up to the grid, guarded against combinatorial blow-up) and an LP that solves
the min-max split exactly via scipy. They cross-check each other in tests.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from .. import errors

SIMPLEX_TOL = 1e-6
GRID_POINT_GUARD = 10**8
BUILTIN_NAMES = ("twoIE", "threeIE", "fiveIE")


@dataclass(frozen=True)
class IEPair:
    id: str
    paths: tuple[tuple[str, ...], ...]  # K paths, each a sequence of link ids
    demand_range: tuple[float, float]

    @property
    def k(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class Topology:
    name: str
    link_ids: tuple[str, ...]
    capacities: np.ndarray  # (L,)
    ie_pairs: tuple[IEPair, ...]
    bottleneck_ids: tuple[str, ...]

    @property
    def n_links(self) -> int:
        return len(self.link_ids)

    @property
    def n_pairs(self) -> int:
        return len(self.ie_pairs)

    def link_index(self, link_id: str) -> int:
        return self.link_ids.index(link_id)

    def incidence(self, pair_idx: int) -> np.ndarray:
        """(K, L) 0/1 matrix: which links each of the pair's paths crosses."""
        pair = self.ie_pairs[pair_idx]
        mat = np.zeros((pair.k, self.n_links))
        for k, path in enumerate(pair.paths):
            for lid in path:
                mat[k, self.link_index(lid)] = 1.0
        return mat

    def observed_links(self, pair_idx: int) -> list[int]:
        """Link indices on the pair's own paths, first-appearance order."""
        seen: list[int] = []
        for path in self.ie_pairs[pair_idx].paths:
            for lid in path:
                j = self.link_index(lid)
                if j not in seen:
                    seen.append(j)
        return seen


def _builtin_doc(name: str) -> dict:
    path = resources.files("accnet.data.topologies").joinpath(f"{name}.json")
    return json.loads(path.read_text())


def load_topology(source) -> Topology:
    """Build a validated Topology from a builtin name, JSON file path, or dict."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, (str, Path)):
        text = str(source)
        if text in BUILTIN_NAMES:
            doc = _builtin_doc(text)
        elif Path(text).is_file():
            doc = json.loads(Path(text).read_text())
        else:
            raise errors.ConfigError(
                f"unknown topology {text!r}: not a builtin {BUILTIN_NAMES} and not a file")
    else:
        raise errors.ConfigError(f"cannot load topology from {type(source).__name__}")

    try:
        link_ids = tuple(l["id"] for l in doc["links"])
        capacities = np.array([float(l["capacity"]) for l in doc["links"]])
        pairs = tuple(
            IEPair(
                id=p["id"],
                paths=tuple(tuple(path) for path in p["paths"]),
                demand_range=tuple(float(x) for x in p.get("demand_range", (4.0, 9.0))),
            )
            for p in doc["ie_pairs"]
        )
        bottlenecks = tuple(doc.get("bottlenecks", link_ids))
    except (KeyError, TypeError) as exc:
        raise errors.ConfigError(f"malformed topology document: {exc}") from exc

    if len(set(link_ids)) != len(link_ids):
        raise errors.ConfigError("duplicate link ids")
    if np.any(capacities <= 0):
        raise errors.ConfigError("link capacities must be positive")
    if not bottlenecks:
        raise errors.ConfigError("bottleneck list must be non-empty")
    known = set(link_ids)
    for b in bottlenecks:
        if b not in known:
            raise errors.ConfigError(f"bottleneck {b!r} is not a defined link")
    for p in pairs:
        if p.k < 2:
            raise errors.ConfigError(f"pair {p.id}: needs at least 2 paths")
        if len(set(p.paths)) != p.k:
            raise errors.ConfigError(f"pair {p.id}: paths must be distinct")
        if p.demand_range[0] < 0 or p.demand_range[1] < p.demand_range[0]:
            raise errors.ConfigError(f"pair {p.id}: bad demand range {p.demand_range}")
        for path in p.paths:
            for lid in path:
                if lid not in known:
                    raise errors.ConfigError(f"pair {p.id}: path names undefined link {lid!r}")
    return Topology(doc.get("name", "custom"), link_ids, capacities, pairs, bottlenecks)


def _check_simplex(split: np.ndarray, k: int, label: str) -> np.ndarray:
    split = np.asarray(split, dtype=np.float64)
    if split.shape != (k,):
        raise errors.ContractError(f"{label}: expected {k} fractions, got shape {split.shape}")
    if np.any(split < -SIMPLEX_TOL) or abs(float(split.sum()) - 1.0) > SIMPLEX_TOL:
        raise errors.ContractError(f"{label}: split {split} is off the simplex")
    return np.clip(split, 0.0, None)


def compute_link_utilization(topology: Topology, demands, splits) -> np.ndarray:
    """U_l = (sum of flow routed over link l) / C_l, in topology link order."""
    demands = np.asarray(demands, dtype=np.float64)
    if demands.shape != (topology.n_pairs,):
        raise errors.ContractError(f"expected {topology.n_pairs} demands")
    if np.any(demands < 0):
        raise errors.ContractError("demands must be nonnegative")
    load = np.zeros(topology.n_links)
    for i, pair in enumerate(topology.ie_pairs):
        y = _check_simplex(splits[i], pair.k, f"pair {pair.id}")
        load += demands[i] * (y @ topology.incidence(i))
    return load / topology.capacities


def simplex_grid(k: int, resolution: float) -> np.ndarray:
    """All points of the K-simplex with coordinates in multiples of resolution."""
    n = round(1.0 / resolution)
    if n < 1 or abs(n * resolution - 1.0) > 1e-9:
        raise errors.ContractError(f"resolution {resolution} must divide 1 evenly")
    combos = itertools.combinations(range(n + k - 1), k - 1)
    rows = []
    for bars in combos:
        prev, parts = -1, []
        for b in (*bars, n + k - 1):
            parts.append(b - prev - 1)
            prev = b
        rows.append(parts)
    return np.array(rows, dtype=np.float64) / n


def grid_point_count(topology: Topology, resolution: float) -> int:
    n = round(1.0 / resolution)
    total = 1
    for pair in topology.ie_pairs:
        total *= math.comb(n + pair.k - 1, pair.k - 1)
    return total


def min_max_oracle(topology: Topology, demands, grid_resolution: float = 0.01,
                   ) -> tuple[float, list[np.ndarray]]:
    """Exhaustive grid search for the split minimizing the worst utilization.

    Returns (best max-U, achieving per-pair splits). Exact up to the grid.
    """
    demands = np.asarray(demands, dtype=np.float64)
    total = grid_point_count(topology, grid_resolution)
    if total > GRID_POINT_GUARD:
        raise errors.ContractError(
            f"grid search needs {total:.2e} points (> {GRID_POINT_GUARD:.0e}); "
            "use min_max_lp for this topology")
    grids = [simplex_grid(p.k, grid_resolution) for p in topology.ie_pairs]
    # per pair: utilization contribution of every candidate split, (G_i, L)
    contribs = [
        demands[i] * (grids[i] @ topology.incidence(i)) / topology.capacities
        for i in range(topology.n_pairs)
    ]
    sizes = [len(g) for g in grids]
    best_val, best_flat = np.inf, 0
    chunk = 1 << 18
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total))
        multi = np.unravel_index(flat, sizes)
        util = contribs[0][multi[0]]
        for i in range(1, topology.n_pairs):
            util = util + contribs[i][multi[i]]
        worst = util.max(axis=1)
        j = int(worst.argmin())
        if worst[j] < best_val:
            best_val, best_flat = float(worst[j]), int(flat[j])
    multi = np.unravel_index(best_flat, sizes)
    return best_val, [grids[i][multi[i]] for i in range(topology.n_pairs)]


def min_max_lp(topology: Topology, demands) -> float:
    """Exact min-max utilization via linear programming.

    Variables: all split fractions plus the bound t; minimize t subject to
    per-link utilization <= t and per-pair fractions summing to 1.
    """
    demands = np.asarray(demands, dtype=np.float64)
    offsets, n_y = [], 0
    for pair in topology.ie_pairs:
        offsets.append(n_y)
        n_y += pair.k
    n_var = n_y + 1  # trailing variable is t
    c = np.zeros(n_var)
    c[-1] = 1.0
    a_ub = np.zeros((topology.n_links, n_var))
    for i, pair in enumerate(topology.ie_pairs):
        inc = topology.incidence(i)  # (K, L)
        a_ub[:, offsets[i]:offsets[i] + pair.k] += (demands[i] * inc / topology.capacities[None, :]).T
    a_ub[:, -1] = -1.0
    a_eq = np.zeros((topology.n_pairs, n_var))
    for i, pair in enumerate(topology.ie_pairs):
        a_eq[i, offsets[i]:offsets[i] + pair.k] = 1.0
    bounds = [(0, None)] * n_y + [(None, None)]
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(topology.n_links),
                  A_eq=a_eq, b_eq=np.ones(topology.n_pairs), bounds=bounds, method="highs")
    if not res.success:
        raise errors.ContractError(f"LP failed: {res.message}")
    return float(res.x[-1])


class RoutingEnv:
    """Episodic wrapper: fixed per-episode demands, previous-step utilizations."""

    kind = "continuous"

    def __init__(self, topology: Topology, horizon: int = 30):
        if horizon < 0:
            raise errors.ContractError("horizon must be nonnegative")
        self.topology = topology
        self.horizon = horizon
        self.n_agents = topology.n_pairs
        self._observed = [topology.observed_links(i) for i in range(self.n_agents)]
        self.action_dims = [p.k for p in topology.ie_pairs]
        self.state_dims = [1 + 3 * len(obs) for obs in self._observed]
        self.demands = np.zeros(self.n_agents)
        self._utilizations = np.zeros(topology.n_links)
        self.t = 0

    @property
    def last_utilizations(self) -> np.ndarray:
        return self._utilizations.copy()

    def _states(self) -> list[np.ndarray]:
        out = []
        for i, obs in enumerate(self._observed):
            u = self._utilizations[obs]
            triples = np.stack([u, np.maximum(0.0, 1.0 - u), np.maximum(0.0, u - 1.0)], axis=1)
            out.append(np.concatenate(([self.demands[i]], triples.ravel())))
        return out

    def reset(self, rng: np.random.Generator) -> list[np.ndarray]:
        self.demands = np.array([
            rng.uniform(*p.demand_range) for p in self.topology.ie_pairs
        ])
        self._utilizations = np.zeros(self.topology.n_links)
        self.t = 0
        return self._states()

    def step(self, actions) -> tuple[list[np.ndarray], float, bool]:
        if len(actions) != self.n_agents:
            raise errors.ContractError(f"expected {self.n_agents} actions")
        self._utilizations = compute_link_utilization(self.topology, self.demands, actions)
        reward = 1.0 - float(self._utilizations.max())
        self.t += 1
        return self._states(), reward, self.t >= self.horizon
