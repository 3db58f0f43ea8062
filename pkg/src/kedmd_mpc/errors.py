"""Exception hierarchy shared across the package."""


class KedmdError(Exception):
    """Base class for all package errors."""


class DomainError(KedmdError, ValueError):
    """A state or input lies outside the region where a map is defined."""


class ConfigurationError(KedmdError, ValueError):
    pass


class DataError(KedmdError, ValueError):
    pass


class ExcitationError(KedmdError, ValueError):
    """Input samples of a cluster do not excite all input directions."""


class NumericalError(KedmdError, ArithmeticError):
    """A factorization or solve failed. ``suggestion`` holds a remedy, if any."""

    def __init__(self, message, suggestion=None):
        super().__init__(message if suggestion is None else f"{message} ({suggestion})")
        self.suggestion = suggestion


class CapabilityError(KedmdError, NotImplementedError):
    pass


class CertificateRefused(KedmdError, ValueError):
    pass
