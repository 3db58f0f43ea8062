"""Kernel EDMD surrogates of control-affine systems with MPC and stability diagnostics."""
from .errors import (
    CapabilityError,
    CertificateRefused,
    ConfigurationError,
    DataError,
    DomainError,
    ExcitationError,
    KedmdError,
    NumericalError,
)
from .geometry import Box

__version__ = "0.1.0"
