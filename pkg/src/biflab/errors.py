"""Exception hierarchy shared by all biflab modules."""


class BiflabError(Exception):
    """Base class for all errors raised by biflab."""


class ConfigError(BiflabError):
    pass


class NoEscapeCertificate(BiflabError):
    """Coefficient bounds cannot certify U ⋐ V at the requested escape radius."""


class OrbitEscaped(BiflabError):
    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"orbit escaped at step {step}")


class DegenerateLeadingCoefficient(BiflabError):
    pass


class NonConvergence(BiflabError):
    """Root iteration hit its cap; ``partial`` holds the best root set found."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class StartOnExceptionalOrbit(BiflabError):
    pass


class DegreeCapExceeded(BiflabError):
    pass


class ClippedFractionExcessive(BiflabError):
    def __init__(self, fraction, limit):
        self.fraction = fraction
        self.limit = limit
        super().__init__(
            f"{fraction:.3%} of sample points hit the Jacobian floor (limit {limit:.1%})"
        )


class AllSamplesEscaped(BiflabError):
    pass


class InsufficientPoints(BiflabError):
    pass


class BranchCapExceeded(BiflabError):
    pass


class PreconditionError(BiflabError):
    pass


class BaseNotRepelling(BiflabError):
    pass


class MalformedGrid(BiflabError):
    pass
