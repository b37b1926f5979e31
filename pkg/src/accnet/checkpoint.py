"""Versioned, checksummed model persistence.

Checkpoints are JSON: a payload dict plus a sha256 over its canonical
serialization. Parameters round-trip losslessly because JSON floats are
emitted with ``repr``, which is exact for float64. An actors-only export
keeps just the nets needed at execution time; loading one yields a model
whose stripped components raise MissingComponentError when touched.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .models import ArchKind, CriticDesign, EnvSpec, ModelConfig, MultiAgentModel, build

FORMAT = "accnet-checkpoint"
VERSION = 1


def _digest(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def save_checkpoint(model: MultiAgentModel, path, actors_only: bool = False) -> Path:
    """Write ``model`` to ``path``; returns the path written.

    With ``actors_only`` only the execution-time nets are stored (actors,
    plus the channel for the architecture that consults it while acting).
    """
    nets = model.execution_nets() if actors_only else model.unique_nets()
    cfg = model.config
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "arch": model.kind.value,
        "actors_only": bool(actors_only),
        "env_spec": {
            "n_agents": model.env_spec.n_agents,
            "state_dims": list(model.env_spec.state_dims),
            "action_dims": list(model.env_spec.action_dims),
            "mode": model.env_spec.mode,
        },
        "model_config": {
            "actor_hidden": list(cfg.actor_hidden),
            "critic_hidden": list(cfg.critic_hidden),
            "encoder_hidden": list(cfg.encoder_hidden),
            "coordinator_hidden": list(cfg.coordinator_hidden),
            "message_dim": cfg.message_dim,
            "signal_dim": cfg.signal_dim,
            "critic_design": cfg.critic_design.value if cfg.critic_design else None,
        },
        "nets": {name: net.flat.tolist() for name, net in nets.items()},
    }
    document = {"payload": payload, "sha256": _digest(payload)}
    path = Path(path)
    path.write_text(json.dumps(document))
    return path


def load_checkpoint(path) -> MultiAgentModel:
    """Reconstruct a model; raises CheckpointError on damage or mismatch."""
    try:
        document = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from None
    if not isinstance(document, dict) or set(document) != {"payload", "sha256"}:
        raise CheckpointError(f"{path}: not a checkpoint document")
    payload = document["payload"]
    if _digest(payload) != document["sha256"]:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    if payload.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unrecognized format {payload.get('format')!r}")
    if payload.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: version {payload.get('version')} unsupported (want {VERSION})")

    spec = EnvSpec(
        n_agents=payload["env_spec"]["n_agents"],
        state_dims=tuple(payload["env_spec"]["state_dims"]),
        action_dims=tuple(payload["env_spec"]["action_dims"]),
        mode=payload["env_spec"]["mode"],
    )
    mc = payload["model_config"]
    design = mc["critic_design"]
    cfg = ModelConfig(
        actor_hidden=tuple(mc["actor_hidden"]),
        critic_hidden=tuple(mc["critic_hidden"]),
        encoder_hidden=tuple(mc["encoder_hidden"]),
        coordinator_hidden=tuple(mc["coordinator_hidden"]),
        message_dim=mc["message_dim"],
        signal_dim=mc["signal_dim"],
        critic_design=CriticDesign(design) if design else None,
    )
    model = build(ArchKind(payload["arch"]), spec, cfg, np.random.default_rng(0))

    stored = payload["nets"]
    if payload["actors_only"]:
        keep = model.execution_nets()
        model.critics = None
        if model.channel is not None and not any(
                name.startswith(("encoder", "coordinator")) for name in stored):
            model.channel = None
    else:
        keep = model.unique_nets()
    if set(stored) != set(keep):
        raise CheckpointError(
            f"{path}: net set mismatch (stored {sorted(stored)}, need {sorted(keep)})")
    for name, net in keep.items():
        values = np.asarray(stored[name], dtype=float)
        if values.shape != net.flat.shape:
            raise CheckpointError(
                f"{path}: parameter count mismatch for {name!r} "
                f"({values.size} stored, {net.flat.size} expected)")
        net.flat[:] = values
    return model
