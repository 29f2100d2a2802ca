"""Exception hierarchy shared across the package."""


class NutNetError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(NutNetError):
    """Shapes of two arrays are incompatible for the requested operation."""


class ConfigError(NutNetError):
    """A configuration value is out of range or internally inconsistent."""


class InputError(NutNetError):
    """An input image or dataset does not satisfy a precondition."""


class TrainingError(NutNetError):
    """Training failed (non-finite loss, empty batch, bad optimizer state)."""


class IntegrityError(NutNetError):
    """A checkpoint failed its checksum."""


class VersionError(NutNetError):
    """A checkpoint or report was written by an incompatible format version."""


class PlacementError(NutNetError):
    """A transformed patch does not fit inside the target image."""


class UndefinedMetricError(NutNetError):
    """A metric has no defined value for the given inputs (e.g. empty ground truth)."""
