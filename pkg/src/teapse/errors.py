"""Exception hierarchy.

Every error carries a short machine-readable ``code`` so the command line can
report ``error: <code>: <message>`` uniformly.
"""


class TeapseError(Exception):
    code = "teapse"


class ConfigError(TeapseError, ValueError):
    code = "config"


class ShapeError(TeapseError, ValueError):
    code = "shape"


class InputTooShortError(TeapseError, ValueError):
    code = "input-too-short"


class ReconstructionError(TeapseError, ValueError):
    code = "reconstruction"


class NonCausalLayerError(TeapseError, RuntimeError):
    code = "non-causal-layer"


class InfeasibleRT60Error(TeapseError, ValueError):
    code = "infeasible-rt60"


class SignalError(TeapseError, ValueError):
    """Silent, empty, or otherwise unusable audio."""

    code = "signal"


class WavFormatError(TeapseError, ValueError):
    code = "wav-format"


class UnsupportedEncodingError(WavFormatError):
    code = "unsupported-encoding"


class WeightFileError(TeapseError, ValueError):
    code = "weights"


class BadMagicError(WeightFileError):
    code = "bad-magic"


class ChecksumError(WeightFileError):
    code = "crc-mismatch"


class WeightShapeError(WeightFileError):
    code = "shape-mismatch"
