"""Shared exception types."""


class ShapeError(ValueError):
    """Array dimensions do not match the declared layer/net layout."""


class ContractError(RuntimeError):
    """A call violated an ordering or alignment precondition (stale tape, fragmentary batch, ...)."""


class ProtocolError(ValueError):
    """Channel invoked with a wrong or incomplete message set."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class CheckpointError(ValueError):
    """Unreadable, corrupt, or version-incompatible checkpoint."""


class MissingComponentError(RuntimeError):
    """Operation requires a model component that was stripped from this checkpoint."""
