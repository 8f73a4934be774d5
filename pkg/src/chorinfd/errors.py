"""Exception and warning types raised across the package."""


class ChorinError(Exception):
    """Base class for all package errors."""


class ConfigError(ChorinError, ValueError):
    pass


class EmptyGrid(ChorinError):
    pass


class DisconnectedGrid(UserWarning):
    """The interior of the discrete domain is not edge-connected."""


class AxisOutOfRange(ChorinError, IndexError):
    pass


class DomainMismatch(ChorinError):
    pass


class BoundaryNotZero(ChorinError):
    pass


class SolverDiverged(ChorinError):
    pass


class TooLargeForDense(ChorinError):
    pass


class SingularMatrix(ChorinError):
    pass


class NonpositiveTau(ChorinError, ValueError):
    pass


class QuadratureFailure(ChorinError):
    pass


class LedgerViolation(ChorinError):
    def __init__(self, message, ledger=None):
        super().__init__(message)
        self.ledger = ledger


class MissingSnapshots(ChorinError):
    pass


class GridsNotAligned(ChorinError):
    pass


class AlignmentError(ChorinError):
    pass


class SupportTooClose(ChorinError):
    pass


class EmptyDictionary(ChorinError):
    pass


class DivergenceWarning(UserWarning):
    """Advecting velocity is not discretely divergence free to the warn threshold."""
