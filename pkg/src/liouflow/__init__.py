"""liouflow: desk-scale construction of C1 half-line flows with prescribed smooth times.

The package turns rational approximations of a Liouville number into a tower
of conjugated vector fields on [0, oo) and certifies the quantitative
estimates of the construction (stage perturbation norms, tangency identities,
L-operator blow-up, Cantor covers of smooth times) at extended precision.
"""

from .errors import (
    BracketError,
    CertificateViolation,
    ConfigError,
    ConstructionError,
    ContractViolation,
    DomainTruncationError,
    GeometryError,
    InsufficientOrderError,
    IntegrityError,
    LiouflowError,
    NormEstimationError,
    QuadratureBudgetError,
    SelectionBudgetError,
    SingularJetError,
)

__all__ = [
    "BracketError",
    "CertificateViolation",
    "ConfigError",
    "ConstructionError",
    "ContractViolation",
    "DomainTruncationError",
    "GeometryError",
    "InsufficientOrderError",
    "IntegrityError",
    "LiouflowError",
    "NormEstimationError",
    "QuadratureBudgetError",
    "SelectionBudgetError",
    "SingularJetError",
]

__version__ = "0.1.0"
