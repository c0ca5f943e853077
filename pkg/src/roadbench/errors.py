"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all roadbench errors."""


class MalformedLine(ToolkitError):
    """A label or prediction line has the wrong field count or non-numeric fields."""


class ClassOutOfRange(ToolkitError):
    """Class index is negative or not smaller than the taxonomy size."""


class CoordOutOfRange(ToolkitError):
    """A normalized coordinate is outside [0, 1] or a box side is zero."""


class ConfidenceOutOfRange(ToolkitError):
    """Detection confidence is outside [0, 1]."""


class DegenerateTransform(ToolkitError):
    """A projective transform maps a box corner to (or past) the plane at infinity."""


class KernelTooLarge(ToolkitError):
    """Filter kernel exceeds the smaller image dimension."""


class ConfigError(ToolkitError):
    """An augmentation spec, taxonomy, or manifest file failed to parse or validate."""


class IoFailure(ToolkitError):
    """A dataset directory or file could not be read."""


class SpawnFailure(ToolkitError):
    """The external detector command could not be started."""


class NonZeroExit(ToolkitError):
    """The external detector command exited with a non-zero status.

    Carries the exit code and captured stderr for diagnosis.
    """

    def __init__(self, returncode: int, stderr: str):
        super().__init__(f"detector command exited with status {returncode}")
        self.returncode = returncode
        self.stderr = stderr


class MissingOutput(ToolkitError):
    """The external detector command did not produce an expected output file."""


class UnknownFormat(ToolkitError):
    """Requested report format is not one of the supported formats."""
