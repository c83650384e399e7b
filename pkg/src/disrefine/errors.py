"""Exception types shared across the package."""


class DisRefineError(Exception):
    """Base class for all package errors."""


class ShapeError(DisRefineError):
    """Array dimensions are inconsistent with the operation's contract."""


class InvalidBoxError(DisRefineError):
    """Prompt box is malformed or falls outside the target image extent."""


class EmptyMaskError(DisRefineError):
    """Operation requires at least one foreground pixel."""


class LayoutError(DisRefineError):
    """Dataset directory does not follow the im/ gt/ convention."""


class IngestionError(DisRefineError):
    """External coarse masks are missing or unreadable."""


class NumericError(DisRefineError):
    """A loss component or parameter became NaN or infinite."""


class ConfigurationError(DisRefineError):
    """Training inputs are incomplete (missing coarse masks or prompt boxes)."""
