"""Exception types raised across the package."""


class HddpcError(Exception):
    """Base class for all errors raised by this package."""


class ShapeMismatch(HddpcError, ValueError):
    pass


class OutOfRange(HddpcError, IndexError):
    pass


class EmptyCollection(HddpcError, ValueError):
    pass


class TrajectoryTooShort(HddpcError, ValueError):
    pass


class MissingTransitionData(HddpcError, ValueError):
    pass


class OutOfDomain(HddpcError, ValueError):
    pass


class RankDeficientBasis(HddpcError, ValueError):
    pass


class SingularOrbit(HddpcError, ValueError):
    pass


class InvalidProblem(HddpcError, ValueError):
    """A QP whose data violates the problem invariants (shape, symmetry, PSD)."""


class SolverFailed(HddpcError, RuntimeError):
    """The QP solver did not return a solved status."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class InfeasibleBeyondTolerance(HddpcError, RuntimeError):
    """A plan whose constraint residual exceeds the acceptance tolerance."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual


class MissingHankel(HddpcError, KeyError):
    pass


class InsufficientHistory(HddpcError, ValueError):
    pass


class CollectionFellOver(HddpcError, RuntimeError):
    pass


class ConfigError(HddpcError, ValueError):
    pass
