"""Exception hierarchy shared by all lvtomo modules."""


class LvtomoError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(LvtomoError, ValueError):
    """Invalid argument values (bad dims, fractions, out-of-range pixels...)."""


class FormatError(LvtomoError):
    """Malformed binary file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ShapeError(LvtomoError, ValueError):
    """Array shape does not match the declared contract."""


class CapacityError(LvtomoError, ValueError):
    """Sequence longer than the padded capacity N."""


class IndexRangeError(LvtomoError, IndexError):
    """Voxel index outside the grid."""


class MetricError(LvtomoError, ValueError):
    """Metric undefined for the given operands (e.g. zero-norm vector)."""


class ReconstructionError(LvtomoError):
    """Reconstruction cannot proceed (e.g. no ray intersects the grid)."""


class StateError(LvtomoError):
    """Operation issued against missing or inconsistent internal state."""


class TrainingError(LvtomoError):
    """Training aborted (e.g. non-finite loss); message carries diagnostics."""


class ConfigError(LvtomoError, ValueError):
    """Invalid experiment configuration (unknown keys, missing files...)."""
