"""Exception types raised across the package.

Every error raised by splatseg derives from SplatsegError so callers can
catch the whole family at API boundaries (CLI, HTTP service).
"""


class SplatsegError(Exception):
    """Base class for all splatseg errors."""


class ParseError(SplatsegError):
    """Malformed input file. Carries the byte offset where parsing failed."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SchemaError(SplatsegError):
    """A required property or field is missing or invalid."""

    def __init__(self, name: str, message: str | None = None):
        super().__init__(message or f"missing or invalid property: {name}")
        self.name = name


class IoError(SplatsegError):
    """Underlying filesystem I/O failed."""


class FormatError(SplatsegError):
    """Image file has an unsupported pixel format."""


class ShapeError(SplatsegError):
    """Array arguments have inconsistent shapes."""


class LabelError(SplatsegError):
    """A label value falls outside the supported [0, 255] range."""


class NumericError(SplatsegError):
    """Non-finite values where finite ones are required."""


class ConfigError(SplatsegError):
    """Invalid configuration for a pipeline stage."""


class SizeError(SplatsegError):
    """Input too small for the requested operation."""


class EmptySceneError(SplatsegError):
    """Operation requires a non-empty scene."""


class BehindCamera(SplatsegError):
    """Point projects behind the camera near plane; caller must skip it."""


class NoHit(SplatsegError):
    """Pixel query found no splat coverage."""
