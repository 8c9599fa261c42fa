"""Exception hierarchy shared by all modules."""


class SmoothLinError(Exception):
    """Base class for every error raised by the package."""


class NumericalFailure(SmoothLinError):
    """Integration could not be carried out between two times."""

    def __init__(self, message, s=None, t=None):
        super().__init__(message)
        self.s = s
        self.t = t


class EscapeError(SmoothLinError):
    """Some trajectories left the configured escape radius.

    The integrated values are kept in ``result`` and the offending rows are
    flagged in ``mask`` so callers can drop them and carry on.
    """

    def __init__(self, message, result=None, mask=None):
        super().__init__(message)
        self.result = result
        self.mask = mask


class DegenerateCocycleError(SmoothLinError):
    pass


class ResolutionError(SmoothLinError):
    def __init__(self, message, suggested_step=None):
        super().__init__(message)
        self.suggested_step = suggested_step


class NonHyperbolicError(SmoothLinError):
    pass


class SplittingError(SmoothLinError):
    pass


class OrbitError(SmoothLinError):
    pass


class TailError(SmoothLinError):
    """Truncated Green's sums are not converged; increase ``n_tail``."""


class InverseError(SmoothLinError):
    pass


class DomainError(SmoothLinError):
    pass


class BudgetViolation(SmoothLinError):
    pass


class ConfigError(SmoothLinError):
    pass
