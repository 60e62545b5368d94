"""Stretched lattice polymers in a random potential: exact enumeration,
transfer recursions, renewal analysis and quenched experiments."""

__version__ = "0.1.0"

from .environment import Environment, PotentialLaw, parse_law, phi_beta, sample_environment
from .errors import BoxError, CapacityError, DomainError, NumericalError, StretchPolyError, ValidationError
from .polymer import ConeSpec, PolymerPath
from .renewal import RenewalModel, fit_renewal

__all__ = [
    "__version__",
    "BoxError",
    "CapacityError",
    "ConeSpec",
    "DomainError",
    "Environment",
    "NumericalError",
    "PolymerPath",
    "PotentialLaw",
    "RenewalModel",
    "StretchPolyError",
    "ValidationError",
    "fit_renewal",
    "parse_law",
    "phi_beta",
    "sample_environment",
]
