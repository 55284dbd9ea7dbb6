"""Exception hierarchy shared by all modules."""


class KSError(Exception):
    """Base class for all package errors."""


class DegenerateDenominator(KSError, ValueError):
    pass


class NonpositiveDenominator(KSError, ValueError):
    pass


class InadmissibleParams(KSError, ValueError):
    pass


class RangeViolation(KSError, ValueError):
    pass


class ShapeMismatch(KSError, ValueError):
    pass


class NonzeroBoundaryFlux(KSError, ValueError):
    pass


class LinearSolveFailure(KSError, RuntimeError):
    pass


class PositivityViolation(KSError, RuntimeError):
    """Clipped mass in a step exceeded the positivity budget."""


class NonFiniteState(KSError, FloatingPointError):
    pass


class WrongVerdict(KSError, ValueError):
    pass


class NotCauchy(KSError, RuntimeError):
    """Consecutive snapshots have not settled on the fitting annulus."""


class EmptyAnnulus(KSError, ValueError):
    pass


class NonpositiveProfile(KSError, ValueError):
    pass


class ParseError(KSError, ValueError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.key = key


class ValidationError(KSError, ValueError):
    pass
