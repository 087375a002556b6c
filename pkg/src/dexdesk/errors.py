"""Exception types shared across the library."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class InvalidRotationError(ContractViolation):
    """Matrix fails the orthonormality / determinant check beyond tolerance."""


class Degenerate6DError(ValueError):
    """6D rotation vector cannot be orthonormalized (near-zero or parallel columns)."""


class RetargetDiverged(RuntimeError):
    """Retargeting energy became non-finite during the solve."""


class NumericError(RuntimeError):
    """Non-finite value encountered in a numeric pipeline."""

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index


class InferenceError(RuntimeError):
    """Chunk inference failed while decoding a predicted step."""

    def __init__(self, message: str, step_index: int | None = None):
        super().__init__(message)
        self.step_index = step_index


class CorruptEpisodeError(RuntimeError):
    """Stored episode failed its checksum or structural validation."""


class EpisodeNotFound(KeyError):
    """No episode with the requested id exists in the store."""


class ProtocolViolation(RuntimeError):
    """Data-protocol rule broken (e.g. curator equals collector)."""


class ModeError(RuntimeError):
    """Session operation invalid in the current mode."""


class MisconfigurationError(RuntimeError):
    """Session or service is missing a required attachment or setting."""


class SchemaMismatchError(RuntimeError):
    """Wire message carries an unsupported schema version."""
