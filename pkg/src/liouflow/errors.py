"""Exception hierarchy shared by all liouflow modules."""


class LiouflowError(Exception):
    """Base class for all package errors."""


class ContractViolation(LiouflowError):
    """An operation was called outside its documented preconditions."""


class SingularJetError(LiouflowError):
    """A jet with vanishing first derivative was used where a diffeomorphism germ is required."""


class InsufficientOrderError(LiouflowError):
    """A jet does not carry enough derivatives for the requested operation."""


class QuadratureBudgetError(LiouflowError):
    """Adaptive quadrature failed to reach the target error within its panel budget."""


class BracketError(LiouflowError):
    """Root bracketing failed (no sign change on the supplied interval)."""


class ConstructionError(LiouflowError):
    """A build-time invariant of the bump profiles could not be satisfied."""


class NormEstimationError(LiouflowError):
    """A sup-norm grid did not stabilise within its refinement budget."""


class DomainTruncationError(LiouflowError):
    """Evaluation was requested below the represented depth of the base field."""


class GeometryError(LiouflowError):
    """A marked-interval or tile assertion failed; signals a coefficient or precision bug."""


class SelectionBudgetError(LiouflowError):
    """The approximation stream was exhausted before a stage gate could be satisfied.

    Signals that the input number's convergents improve too slowly for the
    configured budget, not an internal failure.
    """

    def __init__(self, stage, tried, message):
        super().__init__(message)
        self.stage = stage
        self.tried = tried


class CertificateViolation(LiouflowError):
    """A stored gate certificate failed to replay, or a cover became empty."""


class IntegrityError(LiouflowError):
    """A manifest or report is missing, corrupt, or fails its content hash."""


class ConfigError(LiouflowError):
    """Invalid run configuration."""
