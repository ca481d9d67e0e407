"""
File: app/core/errors.py
Description: Exception hierarchy shared by the engine, the solver, the
environments and the trainer. Each error also derives from the builtin it
refines so callers can keep catching ValueError / RuntimeError.
"""

from typing import Optional


class PIGError(Exception):
    """Base class for every error raised by the package."""


class ShapeError(PIGError, ValueError):
    """Tensor shapes do not conform for the requested operation."""


class GraphError(PIGError, RuntimeError):
    """Backward requested on something that is not a scalar loss."""


class ImpossibleObservationError(PIGError, ValueError):
    """Observation has zero probability under the current belief and action."""


class BackupSizeError(PIGError, RuntimeError):
    """Unpruned alpha-vector backup would exceed the configured cap."""

    def __init__(
        self, num_actions: int, num_vectors: int, num_observations: int, cap: int
    ):
        self.num_actions = num_actions
        self.num_vectors = num_vectors
        self.num_observations = num_observations
        self.requested = num_actions * num_vectors**num_observations
        self.cap = cap
        super().__init__(
            f"Backup of |A|={num_actions}, |Gamma|={num_vectors}, "
            f"|Z|={num_observations} needs {self.requested} vectors (cap {cap})."
        )


class ConfigurationError(PIGError, ValueError):
    """Configuration rejected (unreachable goal, conflicting flags, caps...)."""


class ReplayNotReady(PIGError, RuntimeError):
    """Replay buffer does not hold enough steps to sample the requested batch."""

    def __init__(self, available: int, required: int):
        self.available = available
        self.required = required
        super().__init__(
            f"Replay holds {available} steps, a window of {required} is needed."
        )


class EpisodeFinishedError(PIGError, RuntimeError):
    """Step called on an episode that already terminated or was truncated."""


class CheckpointError(PIGError, ValueError):
    """Checkpoint file is corrupt, truncated or from another format version."""

    def __init__(self, message: str, path: Optional[str] = None):
        self.path = path
        super().__init__(f"{message} ({path})" if path else message)
