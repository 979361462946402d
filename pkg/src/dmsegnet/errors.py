"""Exception hierarchy shared across the package."""


class DmSegNetError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(DmSegNetError, ValueError):
    """An input tensor was rejected because its shape or value range is invalid."""


class OpSpecError(DmSegNetError, ValueError):
    """An operation specification (kernel/stride/padding/groups) is inconsistent."""


class AutodiffError(DmSegNetError, RuntimeError):
    """Misuse of the gradient machinery (e.g. backward on an unrecorded tensor)."""


class ConfigError(DmSegNetError, ValueError):
    """A configuration file or key/value pair could not be accepted."""


class NiftiFormatError(DmSegNetError, ValueError):
    """A NIfTI file is malformed (bad magic, truncated payload, ...)."""


class UnsupportedNiftiError(NiftiFormatError):
    """A NIfTI file uses a feature outside the supported subset."""


class CheckpointFormatError(DmSegNetError, ValueError):
    """A checkpoint file is malformed or fails its integrity checks."""


class CheckpointVersionError(CheckpointFormatError):
    """A checkpoint was written with an incompatible format version."""


class DataError(DmSegNetError, ValueError):
    """A dataset manifest or volume record is invalid."""


class TrainingAborted(DmSegNetError, RuntimeError):
    """Training stopped on a non-finite loss; diagnostic state was dumped."""
