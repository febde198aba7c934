"""Exception types shared across the package."""


class Splat4dError(Exception):
    """Base class for all package errors."""


class OutOfRangeError(Splat4dError, ValueError):
    """A frame index or keyframe segment lies outside the valid span."""


class ShapeError(Splat4dError, ValueError):
    """Array dimensions do not match what an operation requires."""


class StateError(Splat4dError, RuntimeError):
    """An operation was called before the state it depends on exists."""


class DegenerateGeometryError(Splat4dError, ValueError):
    """Geometry too close to singular (e.g. camera sitting on a point)."""


class CapacityError(Splat4dError, ValueError):
    """A duration extension would exceed the total video length."""


class ConfigError(Splat4dError, ValueError):
    """Inconsistent training configuration."""


class ParseError(Splat4dError, ValueError):
    """Malformed input file; carries the byte offset of the failure."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyCloudError(Splat4dError, ValueError):
    """Point cloud contains zero points."""


class TooSmallError(Splat4dError, ValueError):
    """Image smaller than the metric window."""


class TrainingDivergedError(Splat4dError, RuntimeError):
    """Loss became NaN/Inf during optimization."""
