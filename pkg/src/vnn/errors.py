"""Exception types shared across the package."""


class VnnError(Exception):
    """Base class for all package errors."""


class ShapeError(VnnError, ValueError):
    """Operands have incompatible or invalid shapes."""


class KernelError(VnnError, ValueError):
    """Kernel violates the odd-extent (centered) requirement."""


class GeometryError(VnnError, ValueError):
    """Placements or layers do not fit inside the field."""


class PlacementError(VnnError, ValueError):
    """External vector does not match its placement."""


class ConfigError(VnnError, ValueError):
    """Run configuration is malformed or inconsistent."""


class FormatError(VnnError, ValueError):
    """A binary or text container failed to parse.

    ``offset`` carries the byte (or line) position of the failure when known.
    """

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class NumericOverflowError(VnnError, FloatingPointError):
    """A computation produced NaN or Inf."""
