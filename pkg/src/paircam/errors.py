"""Exception types shared across the package."""


class PaircamError(Exception):
    """Base class for all library errors."""


class InputShapeError(PaircamError, ValueError):
    """An image, map or activation tensor has the wrong shape."""


class NumericError(PaircamError, ArithmeticError):
    """A computation produced non-finite values."""


class DegenerateEmbeddingError(PaircamError, ValueError):
    """Cosine similarity was requested for a zero-norm embedding."""


class UnknownMethodError(PaircamError, ValueError):
    """An explanation method or metric name is not registered."""


class UndefinedCorrelationError(PaircamError, ValueError):
    """Correlation requested for a constant input sequence."""


class TrainingError(PaircamError, RuntimeError):
    """Toy contrastive training diverged; carries the loss trace so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class DivergenceError(PaircamError, ArithmeticError):
    """An optimization loop produced a non-finite loss; carries the trace."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class CheckpointError(PaircamError):
    """Base class for checkpoint load/save failures."""


class CheckpointNotFoundError(CheckpointError, FileNotFoundError):
    """Checkpoint file does not exist."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version differs from the supported one."""

    def __init__(self, found, supported):
        super().__init__(
            f"checkpoint format version {found} is not supported "
            f"(this build reads version {supported})"
        )
        self.found = found
        self.supported = supported


class CheckpointCorruptError(CheckpointError):
    """Checkpoint payload is truncated or inconsistent."""
