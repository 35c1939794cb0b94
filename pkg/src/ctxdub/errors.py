"""Exception types shared across the pipeline."""


class CtxDubError(Exception):
    """Base class for all errors raised by this package."""


class NonIntegerRatio(CtxDubError):
    """(sr / hs) / fps does not reduce to a positive integer."""


class InvalidShapeConfig(CtxDubError):
    """Synthetic corpus shape configuration has non-positive or inconsistent dims."""


class InvariantViolation(CtxDubError):
    """A data structure violates one of its construction invariants."""


class UnknownPhonemeId(CtxDubError):
    """Phoneme id outside [0, vocab)."""


class DimMismatch(CtxDubError):
    """Tensor dimensions incompatible with the operation's contract."""


class LengthMismatch(CtxDubError):
    """Sequences that must share a length do not."""


class BoundsOutOfRange(CtxDubError):
    """Segment bounds fall outside the array they index."""


class DivergenceDetected(CtxDubError):
    """Training loss became non-finite; carries the last good checkpoint path."""

    def __init__(self, message: str, checkpoint_path=None):
        super().__init__(message)
        self.checkpoint_path = checkpoint_path


class IncompatibleCheckpoint(CtxDubError):
    """Checkpoint stage, parameter names, or shapes do not match the model."""


class NoVoicedOverlap(CtxDubError):
    """No frame is voiced in both tracks; the pitch-error rate is undefined."""


class EmptyTrack(CtxDubError):
    """Metric called on a zero-length track."""


class MissingPitchMap(CtxDubError):
    """Corpus does not carry the mel-to-pitch decoding map."""


class ConfigError(CtxDubError):
    """Run configuration is malformed or inconsistent."""
