"""Seeded experiment runner and metric aggregation.

One call to ``run_experiment`` owns a run directory: it trains a fresh
model, detects convergence on the windowed per-step return, evaluates the
frozen policy, logs coordinator traffic for a few episodes, and writes
``metrics.jsonl`` / ``aggregate.json`` / ``messages.csv`` / ``pca.csv`` /
``checkpoint.json``. Aggregation over seeds produces the convergence
ratio, per-bottleneck mean utilization, and failure rate.

Seed discipline: run ``k`` uses ``base_seed + k``; within a run the model
init, training, evaluation, and logging phases draw from independent
streams ``default_rng([seed, 0..3])``, so reruns are bit-identical.
"""

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .checkpoint import save_checkpoint
from .envs.routing import min_max_lp
from .errors import ConfigError
from .models import ArchKind, MultiAgentModel
from .pca import fit_pca, project
from .training import Trainer

__all__ = [
    "RunRecord", "AggregateMetrics", "detect_convergence", "routing_threshold",
    "run_experiment", "aggregate",
]


@dataclass
class RunRecord:
    """Everything measured for one seeded run."""

    seed: int
    architecture: str
    env: str
    threshold: float
    window: int
    returns: list = field(default_factory=list)   # per-episode mean step reward
    converged: bool = False
    convergence_episode: int | None = None
    episodes_trained: int = 0
    eval_episodes: int = 0
    eval_mean_return: float | None = None
    act_channel_calls: int = 0
    # routing only
    eval_max_u: float | None = None
    oracle_max_u: float | None = None
    oracle_gap: float | None = None
    mlu: dict | None = None
    # junction only
    failures: int | None = None
    failure_rate: float | None = None
    message_log_path: str | None = None
    run_dir: str | None = None
    error: str | None = None

    def summary(self) -> dict:
        doc = dataclasses.asdict(self)
        doc.pop("returns")
        return doc


@dataclass(frozen=True)
class AggregateMetrics:
    """Cross-seed reduction for one (architecture, env) cell."""

    architecture: str
    env: str
    n_runs: int
    converged_runs: int
    cr: float
    mlu: dict | None = None        # per-bottleneck means over converged runs
    oracle_gap: float | None = None
    fr: float | None = None
    eval_episodes: int = 0
    failures: int = 0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def detect_convergence(returns, window: int = 50, threshold: float = 0.0):
    """First episode e where the trailing ``window`` mean reaches ``threshold``.

    Episodes are 1-based; a constant series sitting exactly at the
    threshold converges at episode ``window``. Returns (flag, episode or
    None).
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    series = np.asarray(returns, dtype=float)
    if series.size < window:
        return False, None
    sums = np.cumsum(series)
    win = (sums[window - 1 :] - np.concatenate([[0.0], sums[:-window]])) / window
    hits = np.nonzero(win >= threshold)[0]
    if hits.size == 0:
        return False, None
    return True, int(hits[0]) + window


_THRESHOLD_CACHE: dict = {}


def routing_threshold(topology, margin: float = 0.05, sample: int = 200,
                      seed: int = 999) -> float:
    """Convergence bar for a routing topology.

    Mean step reward must reach (1 - expected optimal max utilization)
    minus ``margin``, the expectation taken over ``sample`` random demand
    draws solved exactly.
    """
    key = (topology.name, margin, sample, seed)
    if key not in _THRESHOLD_CACHE:
        rng = np.random.default_rng(seed)
        lo, hi = topology.ie_pairs[0].demand_range
        best = [
            min_max_lp(topology, rng.uniform(lo, hi, size=len(topology.ie_pairs)))
            for _ in range(sample)
        ]
        _THRESHOLD_CACHE[key] = 1.0 - float(np.mean(best)) - margin
    return _THRESHOLD_CACHE[key]


def _resolve_threshold(config: ExperimentConfig, env) -> float:
    conv = config.convergence
    if conv["threshold"] is not None:
        return float(conv["threshold"])
    return routing_threshold(env.topology, margin=conv["margin"],
                             sample=conv["oracle_sample"], seed=conv["oracle_seed"])


def _json_line(stats) -> str:
    doc = dataclasses.asdict(stats)
    return json.dumps(doc, default=float)


def _channel_payloads(model: MultiAgentModel, states, actions):
    """What the channel would see at this step, by architecture."""
    if model.kind is ArchKind.AC_CNET:
        return states
    if model.env_spec.mode == "continuous":
        return [np.concatenate([s, a]) for s, a in zip(states, actions)]
    return states


def _log_messages(model: MultiAgentModel, config: ExperimentConfig, seed: int,
                  run_dir: Path):
    """Replay a few frozen episodes and record all channel traffic."""
    msg_path = run_dir / "messages.csv"
    value_dim = max(model.config.message_dim, model.config.signal_dim)
    header = ["run", "episode", "t", "agent_id", "kind"] + [
        f"v{i}" for i in range(value_dim)]
    rows = []
    if model.channel is not None and config.log_message_episodes > 0:
        env = config.make_env()
        rng = np.random.default_rng([seed, 3])
        explore = config.eval_temperature if model.env_spec.mode == "discrete" else 0.0
        for episode in range(config.log_message_episodes):
            states = env.reset(rng)
            done = False
            t = 0
            while not done:
                actions = model.act(states, rng, explore=explore)
                payloads = _channel_payloads(model, states, actions)
                tape = model.channel.evaluate(payloads)
                for agent_id, values in enumerate(tape.messages):
                    rows.append([seed, episode, t, agent_id, "message",
                                 *np.asarray(values).ravel().tolist()])
                for agent_id, values in enumerate(tape.signals):
                    rows.append([seed, episode, t, agent_id, "signal",
                                 *np.asarray(values).ravel().tolist()])
                step = env.step(actions)
                states, done = step[0], step[2]
                t += 1
    with msg_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row + [""] * (len(header) - len(row)))

    pca_path = run_dir / "pca.csv"
    with pca_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "agent_id", "label"])
        for kind in ("message", "signal"):
            sel = [r for r in rows if r[4] == kind]
            if len(sel) < 2:
                continue
            data = np.array([r[5:] for r in sel if r[5] != ""], dtype=float)
            if data.shape[1] < 2:
                continue
            res = fit_pca(data, n_components=2)
            coords = project(res, data)
            for r, (x, y) in zip(sel, coords):
                writer.writerow([repr(float(x)), repr(float(y)), r[3], kind])
    return msg_path


def _evaluate_routing(model, config, record: RunRecord, rng):
    env = config.make_env()
    topology = env.topology
    n_eval = config.eval_episodes
    per_link = {lid: 0.0 for lid in topology.bottleneck_ids}
    max_us, oracle_us, rets = [], [], []
    calls = 0
    for _ in range(n_eval):
        states = env.reset(rng)
        done = False
        total = 0.0
        steps = 0
        while not done:
            before = model.channel.calls if model.channel is not None else 0
            actions = model.act(states, rng, explore=0.0)
            if model.channel is not None:
                calls += model.channel.calls - before
            states, reward, done = env.step(actions)
            total += reward
            steps += 1
        utilization = env.last_utilizations
        for lid in per_link:
            per_link[lid] += float(utilization[topology.link_index(lid)])
        max_us.append(float(np.max(utilization)))
        oracle_us.append(min_max_lp(topology, env.demands))
        rets.append(total / max(steps, 1))
    record.eval_episodes = n_eval
    record.act_channel_calls = calls
    if n_eval:
        record.eval_mean_return = float(np.mean(rets))
        record.eval_max_u = float(np.mean(max_us))
        record.oracle_max_u = float(np.mean(oracle_us))
        record.oracle_gap = record.eval_max_u - record.oracle_max_u
        record.mlu = {lid: total / n_eval for lid, total in per_link.items()}


def _evaluate_junction(model, config, record: RunRecord, rng):
    env = config.make_env()
    n_eval = config.eval_episodes
    temperature = config.eval_temperature
    failures = 0
    rets = []
    calls = 0
    for _ in range(n_eval):
        states = env.reset(rng)
        done = False
        total = 0.0
        steps = 0
        while not done:
            before = model.channel.calls if model.channel is not None else 0
            actions = model.act(states, rng, explore=temperature)
            if model.channel is not None:
                calls += model.channel.calls - before
            states, reward, done, failed = env.step(actions)
            total += reward
            steps += 1
        failures += int(env.failed)
        rets.append(total / max(steps, 1))
    record.eval_episodes = n_eval
    record.act_channel_calls = calls
    record.failures = failures
    if n_eval:
        record.failure_rate = failures / n_eval
        record.eval_mean_return = float(np.mean(rets))


def run_experiment(config: ExperimentConfig, seed: int,
                   run_dir=None) -> RunRecord:
    """Train, evaluate, and log one seeded run under ``run_dir``.

    Any exception is captured on the record (a crashed run counts as
    non-converged) so a sweep survives individual failures.
    """
    if run_dir is None:
        run_dir = config.out_dir / f"{config.arch.value}_{config.env_label.replace(':', '_')}_s{seed}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    env = config.make_env()
    threshold = _resolve_threshold(config, env)
    conv = config.convergence
    record = RunRecord(seed=seed, architecture=config.arch.value,
                       env=config.env_label, threshold=threshold,
                       window=conv["window"], run_dir=str(run_dir))
    try:
        model = config.make_model(env, np.random.default_rng([seed, 0]))
        trainer = Trainer(model, env, config.make_buffer(), config.hyper)
        train_rng = np.random.default_rng([seed, 1])
        window = conv["window"]
        stop_early = conv["stop_early"]
        with (run_dir / "metrics.jsonl").open("w") as metrics:
            for episode in range(config.hyper.episodes):
                stats = trainer.train_episode(train_rng, episode=episode)
                metrics.write(_json_line(stats) + "\n")
                record.returns.append(stats.mean_reward)
                record.episodes_trained = episode + 1
                if not record.converged and len(record.returns) >= window:
                    mean = float(np.mean(record.returns[-window:]))
                    if mean >= threshold:
                        record.converged = True
                        record.convergence_episode = episode + 1
                        if stop_early:
                            break
        eval_rng = np.random.default_rng([seed, 2])
        if config.env_kind == "routing":
            _evaluate_routing(model, config, record, eval_rng)
        else:
            _evaluate_junction(model, config, record, eval_rng)
        record.message_log_path = str(_log_messages(model, config, seed, run_dir))
        save_checkpoint(model, run_dir / "checkpoint.json")
        if config.arch.is_accnet:
            save_checkpoint(model, run_dir / "checkpoint.actors.json", actors_only=True)
    except Exception as exc:  # noqa: BLE001 - crashed runs count as non-converged
        record.error = f"{type(exc).__name__}: {exc}"
        record.converged = False
        record.convergence_episode = None
    (run_dir / "aggregate.json").write_text(
        json.dumps(record.summary(), indent=2, default=float))
    return record


def aggregate(records) -> AggregateMetrics:
    """Reduce homogeneous run records to CR / MLU / FR."""
    records = list(records)
    if not records:
        raise ConfigError("nothing to aggregate")
    arch = {r.architecture for r in records}
    envs = {r.env for r in records}
    if len(arch) != 1 or len(envs) != 1:
        raise ConfigError(f"mixed records: archs {arch}, envs {envs}")
    n = len(records)
    converged = [r for r in records if r.converged]
    cr = len(converged) / n

    mlu = None
    gap = None
    if converged and converged[0].mlu is not None:
        links = converged[0].mlu.keys()
        mlu = {lid: float(np.mean([r.mlu[lid] for r in converged])) for lid in links}
        gap = float(np.mean([r.oracle_gap for r in converged]))

    fr = None
    eval_total = sum(r.eval_episodes for r in records)
    fail_total = sum(r.failures or 0 for r in records)
    if any(r.failures is not None for r in records) and eval_total:
        fr = fail_total / eval_total

    return AggregateMetrics(architecture=arch.pop(), env=envs.pop(), n_runs=n,
                            converged_runs=len(converged), cr=cr, mlu=mlu,
                            oracle_gap=gap, fr=fr, eval_episodes=eval_total,
                            failures=fail_total)
