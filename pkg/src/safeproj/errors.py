"""Exception hierarchy shared by all modules."""


class SafeProjError(Exception):
    """Base class for every error raised by this package."""


class Infeasible(SafeProjError):
    pass


class MaxIterations(SafeProjError):
    pass


class RankDeficient(SafeProjError):
    pass


class NoConvergence(SafeProjError):
    pass


class Singular(SafeProjError):
    pass


class DimensionMismatch(SafeProjError, ValueError):
    pass


class NotDifferentiable(SafeProjError):
    pass


class InfeasibleSafeSet(Infeasible):
    """The state lies outside the set of states with a nonempty safe set."""


class LicqViolation(SafeProjError):
    pass


class WeakActivity(SafeProjError):
    """A constraint is active with a zero multiplier; only sub-gradients exist."""


class NoInteriorPoint(SafeProjError):
    pass


class SingularGram(SafeProjError):
    """The regression data does not excite the feature space."""


class NotConvex(SafeProjError, ValueError):
    pass


class EmptyBatch(SafeProjError, ValueError):
    pass


class NonFiniteGradient(SafeProjError, ValueError):
    pass


class TubeInfeasible(SafeProjError):
    pass


class UnknownDemo(SafeProjError, KeyError):
    pass


class ConfigError(SafeProjError, ValueError):
    """Carries a list of per-field diagnostics."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))
