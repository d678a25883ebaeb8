"""Exception taxonomy shared across the toolkit."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class BandwidthError(ValueError):
    """Spherical-harmonic bandwidth incompatible with a grid or coefficient set."""


class GeometryError(ValueError):
    """Degenerate or inconsistent spherical geometry."""


class ContainmentError(GeometryError):
    """Query point not contained in the expected region."""


class GridError(ValueError):
    """Mismatched position grids between datasets."""


class FormatError(ValueError):
    """Malformed container file. Carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConditioningError(ArithmeticError):
    """Linear solve too ill-conditioned to trust."""


class NumericError(ArithmeticError):
    """Non-finite value produced where a finite one is required."""


class ShapeError(ValueError):
    """Tensor shape mismatch."""
