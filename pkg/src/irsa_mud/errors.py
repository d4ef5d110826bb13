"""Exception types shared across the package."""


class IrsaMudError(Exception):
    """Base class for all package errors."""


class NegativeCoefficient(IrsaMudError):
    """A degree-distribution coefficient is negative."""


class NotNormalized(IrsaMudError):
    """Degree-distribution coefficients do not sum to 1 within tolerance."""


class ZeroDegreePresent(IrsaMudError):
    """A degree below 1 appears in a degree distribution."""


class DomainError(IrsaMudError):
    """An argument lies outside the mathematical domain of an operation."""


class WindowUnderflow(IrsaMudError):
    """Internal: a sliding-window average was requested on an empty window."""


class ZetaZero(IrsaMudError):
    """The potential function is undefined at zero effective load."""


class RootNotFound(IrsaMudError):
    """A required root could not be bracketed in the search interval."""


class NoUpperBound(IrsaMudError):
    """Feasibility never fails while raising the arrival rate (predicate bug guard)."""


class DegreeExceedsFrame(IrsaMudError):
    """A replica count exceeds the number of slots available in the frame."""


class InstanceTooLarge(IrsaMudError):
    """Instance exceeds the size limits of the exhaustive decoder."""


class InvalidPolicyParam(IrsaMudError):
    """A receiver-policy parameter is out of range."""


class SpecInvalid(IrsaMudError):
    """An experiment specification failed validation.

    ``reasons`` carries one message per independent problem.
    """

    def __init__(self, reasons):
        self.reasons = list(reasons)
        super().__init__("; ".join(self.reasons))
