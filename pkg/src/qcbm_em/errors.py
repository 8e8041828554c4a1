"""Exception hierarchy shared by all modules."""


class QCBMError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(QCBMError, ValueError):
    """Mismatched vector or matrix dimensions."""


class DomainError(QCBMError, ValueError):
    """An argument lies outside the domain of an operation."""


class SizeError(QCBMError, ValueError):
    """Qubit or state count beyond what an operation supports."""


class DegenerateOutputError(QCBMError, ValueError):
    """An operation would produce an all-zero distribution."""


class DegenerateMitigationError(DegenerateOutputError):
    """Every mitigated count was clipped to zero."""


class CalibrationError(QCBMError):
    """An assignment error matrix is singular, ill-conditioned or malformed."""


class ConstructionError(QCBMError):
    """A circuit could not be built as requested."""


class RoutingError(QCBMError):
    """A circuit cannot be mapped onto a coupling graph."""


class UnknownNameError(QCBMError, KeyError):
    """Unknown named layout or preset."""
