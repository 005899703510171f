"""Exception hierarchy shared by all solvers and verifiers."""


class EquistopError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(EquistopError, ValueError):
    """A problem definition is malformed or violates a model invariant."""


class NonPositiveVolatility(ConfigError):
    pass


class SingularSystem(EquistopError):
    """The linear system on the continuation set has no unique solution."""


class NoConvergence(EquistopError):
    pass


class TooManyStates(EquistopError):
    pass


class NotCertified(EquistopError):
    """Forward iteration produced a candidate that failed an assumption check.

    ``assumption`` names the failed check ("A1" .. "A4"); ``result`` holds the
    full iteration output so callers can still inspect it.
    """

    def __init__(self, assumption, message, result=None):
        super().__init__(f"assumption {assumption} failed: {message}")
        self.assumption = assumption
        self.result = result


class NoSignChange(EquistopError):
    pass


class NotMonotoneAbove(EquistopError):
    pass


class NoFixedPoint(EquistopError):
    pass


class HypothesisViolated(EquistopError):
    pass


class DivergentExpectation(EquistopError):
    pass


class EmptyBoundary(EquistopError):
    pass


class PathBudgetExceeded(EquistopError):
    pass


class NoRoot(EquistopError):
    pass


class MultipleRoots(EquistopError):
    pass
