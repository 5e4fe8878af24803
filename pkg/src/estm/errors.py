"""Exception hierarchy shared across the package.

CLI exit codes: ConfigError and I/O-ish failures exit 2, degenerate-data
failures (MetricUndefinedError, DataError) exit 1.
"""


class EstmError(Exception):
    """Base class for all package errors."""


class ConfigError(EstmError):
    """Invalid or inconsistent configuration (bad keys, bad values, rate mismatch)."""


class InputError(EstmError):
    """Malformed input data (bad WAV, waveform too short, empty spectrogram)."""


class ShapeError(EstmError):
    """Array shapes inconsistent with the declared contract."""


class NumericalError(EstmError):
    """Non-finite value produced where the math guarantees finiteness."""


class TrainingError(EstmError):
    """Training-time failure (NaN/Inf gradient, empty or single-class dataset)."""


class CorpusError(EstmError):
    """Corpus layout or manifest problems."""


class CacheFormatError(EstmError):
    """Feature-cache file with bad magic, version, or truncated payload."""


class CheckpointFormatError(EstmError):
    """Checkpoint file with bad magic, version, or truncated payload."""


class MetricUndefinedError(EstmError):
    """AUC/pAUC requested on a set without both positives and negatives."""


class LookupError_(EstmError):
    """Unknown machine type/id for the model's label map."""
