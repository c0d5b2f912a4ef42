"""Exception types shared across the package."""


class GcvaeError(Exception):
    """Base class for every error this package raises on purpose."""


class ShapeError(GcvaeError, ValueError):
    """Operands have incompatible or unsupported shapes."""


class DomainError(GcvaeError, ValueError):
    """A value lies outside an operation's mathematical domain."""


class ContractError(GcvaeError, ValueError):
    """A call violated a documented precondition."""


class FormatError(GcvaeError, ValueError):
    """A binary file does not match the expected on-disk format."""


class LengthError(FormatError):
    """A binary payload is shorter (or longer) than its header promises."""


class ValidationError(GcvaeError, ValueError):
    """Loaded data failed a semantic sanity check."""


class UnsupportedVariantError(GcvaeError, ValueError):
    """The requested objective variant is recognised but not implemented."""


class UndefinedScoreError(GcvaeError, ValueError):
    """A metric has no defined value on this input (e.g. no informative codes)."""


class NonFiniteLossError(GcvaeError, RuntimeError):
    """A loss term became NaN or infinite; carries the offending breakdown."""

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown
