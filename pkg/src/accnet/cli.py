"""Command-line entry points.

Subcommands: ``train`` (one architecture, n seeded runs), ``sweep`` (every
architecture over one environment), ``evaluate`` (frozen checkpoint),
``pca`` (project a message log), ``tables`` (render saved aggregates).
Flag overrides beat the config file, which beats built-in defaults. Exit
status is 0 only if every requested run completed without error.
"""

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import parse_config
from .checkpoint import load_checkpoint
from .errors import ConfigError
from .harness import AggregateMetrics, aggregate, run_experiment
from .models import ArchKind
from .pca import fit_pca, project
from .tables import render_tables

ARCH_CHOICES = [k.value for k in ArchKind]


def _parse_env_flag(value: str) -> dict:
    kind, _, detail = value.partition(":")
    if kind == "routing":
        out = {"kind": "routing"}
        if detail:
            out["topology"] = detail
        return out
    if kind == "junction":
        out = {"kind": "junction"}
        if detail:
            try:
                out["size"] = int(detail)
            except ValueError:
                raise ConfigError(f"junction size must be an integer, got {detail!r}") from None
        return out
    raise ConfigError(f"--env must be routing[:topology] or junction[:size], got {value!r}")


def _overrides(args) -> dict:
    doc: dict = {}
    if getattr(args, "env", None):
        doc["env"] = _parse_env_flag(args.env)
    if getattr(args, "arch", None):
        doc.setdefault("arch", {})["kind"] = args.arch
    if getattr(args, "critic_design", None):
        doc.setdefault("arch", {})["critic_design"] = args.critic_design
    if getattr(args, "episodes", None) is not None:
        doc.setdefault("hyper", {})["episodes"] = args.episodes
    if getattr(args, "runs", None) is not None:
        doc.setdefault("runs", {})["n_runs"] = args.runs
    if getattr(args, "seed", None) is not None:
        doc.setdefault("runs", {})["base_seed"] = args.seed
    if getattr(args, "replay", None):
        doc.setdefault("replay", {})["mode"] = args.replay
    if getattr(args, "out", None):
        doc["out_dir"] = args.out
    if getattr(args, "eval_episodes", None) is not None:
        doc.setdefault("evaluation", {})["episodes"] = args.eval_episodes
    if getattr(args, "allow_discrete_replay", False):
        doc["allow_discrete_replay"] = True
    return doc


def _add_experiment_flags(parser):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--arch", choices=ARCH_CHOICES)
    parser.add_argument("--env", help="routing[:topology] or junction[:size]")
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--runs", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--replay", choices=["cer", "ceer", "none"])
    parser.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    parser.add_argument("--critic-design", dest="critic_design",
                        choices=["signal_only", "signal_plus_local"])
    parser.add_argument("--allow-discrete-replay", action="store_true",
                        dest="allow_discrete_replay")


def _run_cell(config, out_root: Path) -> tuple[AggregateMetrics, bool]:
    records = []
    for k in range(config.n_runs):
        seed = config.base_seed + k
        run_dir = out_root / f"{config.arch.value}_s{seed}"
        record = run_experiment(config, seed, run_dir=run_dir)
        status = "converged" if record.converged else "not converged"
        if record.error:
            status = f"error: {record.error}"
        print(f"  seed {seed}: {status} "
              f"({record.episodes_trained} episodes)", flush=True)
        records.append(record)
    agg = aggregate(records)
    ok = all(r.error is None for r in records)
    return agg, ok


def _cmd_train(args) -> int:
    config = parse_config(args.config, _overrides(args))
    out_root = config.out_dir
    out_root.mkdir(parents=True, exist_ok=True)
    (out_root / "config_echo.json").write_text(config.echo())
    print(f"{config.arch.value} on {config.env_label}: {config.n_runs} runs")
    agg, ok = _run_cell(config, out_root)
    (out_root / f"aggregate_{config.arch.value}.json").write_text(
        json.dumps(agg.to_dict(), indent=2))
    text, _ = render_tables([agg])
    print(text, end="")
    return 0 if ok else 1


def _cmd_sweep(args) -> int:
    all_ok = True
    aggs = []
    out_root = None
    for arch in ARCH_CHOICES:
        args.arch = arch
        config = parse_config(args.config, _overrides(args))
        out_root = config.out_dir
        out_root.mkdir(parents=True, exist_ok=True)
        (out_root / "config_echo.json").write_text(config.echo())
        print(f"{arch} on {config.env_label}: {config.n_runs} runs")
        agg, ok = _run_cell(config, out_root)
        (out_root / f"aggregate_{arch}.json").write_text(
            json.dumps(agg.to_dict(), indent=2))
        aggs.append(agg)
        all_ok = all_ok and ok
    text, payload = render_tables(aggs)
    (out_root / "tables.txt").write_text(text)
    (out_root / "tables.json").write_text(payload)
    print(text, end="")
    return 0 if all_ok else 1


def _cmd_evaluate(args) -> int:
    config = parse_config(args.config, _overrides(args))
    model = load_checkpoint(args.checkpoint)
    env = config.make_env()
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    episodes = config.eval_episodes
    explore = config.eval_temperature if config.env_kind == "junction" else 0.0
    returns, failures = [], 0
    for _ in range(episodes):
        states = env.reset(rng)
        done = False
        total = 0.0
        steps = 0
        while not done:
            actions = model.act(states, rng, explore=explore)
            step = env.step(actions)
            states, reward, done = step[0], step[1], step[2]
            total += reward
            steps += 1
        returns.append(total / max(steps, 1))
        if len(step) > 3:
            failures += int(step[3])
    result = {"episodes": episodes, "mean_step_return": float(np.mean(returns))}
    if config.env_kind == "junction":
        result["failure_rate"] = failures / episodes if episodes else None
    elif config.env_kind == "routing":
        result["final_max_u"] = float(np.max(env.last_utilizations))
    print(json.dumps(result, indent=2))
    return 0


def _cmd_pca(args) -> int:
    rows = []
    with open(args.messages, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["kind"] != args.kind:
                continue
            values = [float(row[k]) for k in sorted(row) if k.startswith("v") and row[k] != ""]
            rows.append((int(row["agent_id"]), values))
    if len(rows) < 2:
        print("not enough rows to project", file=sys.stderr)
        return 1
    data = np.array([v for _, v in rows])
    res = fit_pca(data, n_components=2)
    coords = project(res, data)
    out = Path(args.out or "pca.csv")
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "agent_id", "label"])
        for (agent_id, _), (x, y) in zip(rows, coords):
            writer.writerow([repr(float(x)), repr(float(y)), agent_id, args.kind])
    print(f"wrote {out} ({len(rows)} rows, "
          f"explained {res.explained[0]:.3f}/{res.explained[1] if len(res.explained) > 1 else 0:.3f})")
    return 0


def _cmd_tables(args) -> int:
    aggs = []
    for path in args.inputs:
        doc = json.loads(Path(path).read_text())
        aggs.append(AggregateMetrics(**doc))
    text, payload = render_tables(aggs)
    if args.out:
        Path(args.out).write_text(payload)
    print(text, end="")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="accnet")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train one architecture over n seeds")
    _add_experiment_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_sweep = sub.add_parser("sweep", help="train every architecture over one env")
    _add_experiment_flags(p_sweep)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_eval = sub.add_parser("evaluate", help="run a frozen checkpoint")
    _add_experiment_flags(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.set_defaults(func=_cmd_evaluate)

    p_pca = sub.add_parser("pca", help="2-D projection of a message log")
    p_pca.add_argument("--messages", required=True, help="messages.csv from a run")
    p_pca.add_argument("--kind", choices=["message", "signal"], default="message")
    p_pca.add_argument("--out")
    p_pca.set_defaults(func=_cmd_pca)

    p_tab = sub.add_parser("tables", help="render saved aggregate files")
    p_tab.add_argument("inputs", nargs="+", help="aggregate_*.json files")
    p_tab.add_argument("--out", help="write machine-readable payload here")
    p_tab.set_defaults(func=_cmd_tables)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
