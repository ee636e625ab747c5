"""Exception types shared across the package."""


class ResclipError(ValueError):
    """Base class for all errors raised by this package."""


class ShapeError(ResclipError):
    """Operands have incompatible or unexpected shapes."""


class FormatError(ResclipError):
    """A container file is malformed (bad magic, truncated, bad header)."""


class ValidationError(ResclipError):
    """Inputs are structurally valid but violate a documented contract."""
