"""Exception hierarchy shared by every module of the package."""


class ElChangeError(Exception):
    """Base class for all errors raised by elchange."""


class DimensionError(ElChangeError, ValueError):
    """Array shapes or index arguments are inconsistent."""


class UnsupportedLawError(ElChangeError, ValueError):
    """The requested operation is not defined for this error law."""


class InsufficientDataError(ElChangeError, ValueError):
    """Too few observations for the requested estimate."""


class SingularDesignError(ElChangeError, ValueError):
    """A matrix that must be positive definite (or full rank) is not."""


class InfeasibleMultiplierError(ElChangeError, ValueError):
    """A Lagrange multiplier puts a log argument outside (0, inf)."""


class DegenerateSegmentError(ElChangeError, ValueError):
    """All score vectors of one segment vanish."""


class NumericalInconsistencyError(ElChangeError, ArithmeticError):
    """A quantity that is nonnegative in exact arithmetic came out negative."""


class InsufficientReplicatesError(ElChangeError, ValueError):
    """Too few Monte Carlo replicates for the requested quantity."""


class ConfigError(ElChangeError, ValueError):
    """An experiment configuration is malformed."""
