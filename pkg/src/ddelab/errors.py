"""Exception hierarchy shared by all ddelab modules."""


class DDELabError(Exception):
    """Base class for every error raised by ddelab."""


class DomainError(DDELabError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class OutOfDomain(DomainError):
    pass


class InvalidCoordinates(DomainError):
    pass


class InvalidDelay(DomainError):
    pass


class DivisionByZeroAtCriticalPoint(DomainError, ZeroDivisionError):
    pass


class NoCycleFound(DomainError):
    pass


class ToleranceNotReached(DomainError):
    pass


class NonFiniteValue(DomainError, FloatingPointError):
    pass


class NonFiniteState(NonFiniteValue):
    pass


class RootOnBoundary(DomainError):
    pass


class NewtonDiverged(DomainError):
    def __init__(self, k, seed, msg=None):
        self.k = k
        self.seed = seed
        super().__init__(msg or f"Newton iteration diverged for strip k={k} from seed {seed!r}")


class MissedRoot(DomainError):
    pass


class PrecisionLoss(DomainError):
    pass


class StepUnderflow(DomainError):
    pass


class AbscissaTooLow(DomainError):
    pass


class WindowTooLong(DomainError):
    pass


class BadBracket(DomainError):
    pass


class NoPositiveEquilibrium(DomainError):
    pass


class NonNormalizable(DomainError):
    pass


class ConfigInvalid(DDELabError):
    """Raised by the command-line layer for malformed run configurations."""
