"""Exception taxonomy shared across the pipeline."""


class PulsekinError(Exception):
    """Base class for all pipeline errors."""


class FormatError(PulsekinError):
    """Malformed trace/signal file: bad header, wrong column count, unparseable cell."""


class DataError(PulsekinError):
    """Non-finite value in an ingested file; names the offending cell."""

    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class DurationError(PulsekinError):
    """Trace shorter than the minimum duration admitted to training/eval."""


class DegenerateSignalError(PulsekinError):
    """Signal with zero variance where a non-constant signal is required."""


class BandError(PulsekinError):
    """Invalid band-pass frequency bounds."""


class WindowError(PulsekinError):
    """Analysis window does not fit within the signal."""


class ExtractionError(PulsekinError):
    """Pulse extraction produced no usable channel."""


class ShapeError(PulsekinError):
    """Tensor shapes inconsistent with the requested operation."""


class ConfigError(PulsekinError):
    """Invalid configuration value."""


class GradError(PulsekinError):
    """Non-finite gradient; names the parameter tensor."""


class TrainingError(PulsekinError):
    """Training diverged; carries the epoch index."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class InsufficientDataError(PulsekinError):
    """Too few labeled pairs to run the requested protocol."""


class ClassError(PulsekinError):
    """Score set lacks one of the two classes needed for ROC analysis."""
