"""Exception types shared across dustsense."""


class DustsenseError(Exception):
    pass


class DomainError(DustsenseError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class RejectedReading(DustsenseError, ValueError):
    """A reading was refused; ``reason`` is a stable machine-readable code."""

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class MissingCalibration(DustsenseError, LookupError):
    """No LED reference value is stored for a node."""


class DegenerateFit(DustsenseError, ValueError):
    pass


class DecodeError(DustsenseError, ValueError):
    pass


class AnnotationError(DustsenseError, ValueError):
    pass
