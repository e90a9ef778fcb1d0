"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A config object violates its invariants (bad K/W/D, malformed manifest, ...)."""


class ContractError(ValueError):
    """A caller violated an operation precondition (shape mismatch, bad range)."""


class OutOfBoundsError(ContractError):
    """Query coordinate outside the valid domain; callers must clamp or cull first."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or has an unsupported version."""


class TrainingError(RuntimeError):
    """Training aborted (non-finite loss/gradient); carries the iteration index."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration
