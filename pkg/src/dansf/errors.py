"""Exception hierarchy shared by all dansf modules."""


class DansfError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(DansfError, ValueError):
    pass


class GenerationFailure(DansfError, RuntimeError):
    pass


class InvalidGraph(DansfError, ValueError):
    pass


class AccountingError(DansfError, KeyError):
    pass


class SingularCovariance(DansfError, ArithmeticError):
    pass


class DegenerateProblem(DansfError, ValueError):
    pass


class RankDeficientConstraint(DansfError, ValueError):
    pass


class UndefinedMetric(DansfError, ValueError):
    pass


class IterationAbort(DansfError, RuntimeError):
    """A solver failed inside an iteration; carries the iteration index."""

    def __init__(self, iteration, q, cause):
        self.iteration = iteration
        self.q = q
        self.cause = cause
        super().__init__(f"iteration {iteration} (updating node {q}): {cause}")
