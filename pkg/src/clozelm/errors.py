"""Exception types raised across the package."""


class ClozeLMError(Exception):
    """Base class for package errors."""


class ShapeError(ClozeLMError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateAttentionError(ClozeLMError, ValueError):
    """A softmax row had every entry masked out.

    Usually means an attention mask isolates a position completely.
    """


class InvalidSegmentationError(ClozeLMError, ValueError):
    """Source length of a seq2seq packing is outside [2, n - 1]."""


class CheckpointFormatError(ClozeLMError, ValueError):
    """Checkpoint bytes are not a readable checkpoint, or do not fit the config."""


class NumericFailureError(ClozeLMError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step
        self.loss = loss


class SequenceTooLongError(ClozeLMError, ValueError):
    """Packed input would exceed the model's maximum length."""


class DataError(ClozeLMError, ValueError):
    """Training or evaluation data is unusable (empty corpus, no maskable tokens, ...)."""
