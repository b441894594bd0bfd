"""Exception types shared across the package."""


class BendError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(BendError):
    """Invalid configuration value or combination of values."""


class ShapeError(BendError):
    """Tensor shape or channel-count mismatch."""


class InvalidLayerError(BendError):
    """Layer index outside the generator's tappable range."""


class SizeError(BendError):
    """Sequence length the sorting network cannot handle (not a power of two)."""


class DegenerateEmbeddingError(BendError):
    """A zero-norm vector cannot be projected onto the unit sphere."""


class UnknownAdapterError(BendError):
    """No adapter is registered under the requested name."""


class CheckpointError(BendError):
    """Checkpoint archive is missing fields, malformed, or unreadable."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class TrainingDivergedError(BendError):
    """Loss became NaN or infinite during training.

    Carries the iteration at which the bad value was observed so the user
    can correlate it with the logged history.
    """

    def __init__(self, iteration: int, value: float):
        super().__init__(f"loss diverged at iteration {iteration} (value: {value})")
        self.iteration = iteration
        self.value = value
