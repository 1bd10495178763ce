"""Exception and warning types raised across the package."""


class SicsError(Exception):
    """Base class for computational failures (CLI exit status 1)."""


class NotSymmetric(SicsError, ValueError):
    pass


class NearSingular(SicsError):
    pass


class Singular(SicsError):
    pass


class RankDeficient(SicsError):
    pass


class NoConvergence(SicsError):
    """Iteration cap reached.

    The best iterate found so far is attached as ``best`` together with
    its ``residual`` so callers can decide whether to use it anyway.
    """

    def __init__(self, message, best=None, residual=None, iterations=None):
        super().__init__(message)
        self.best = best
        self.residual = residual
        self.iterations = iterations


class NotSPD(SicsError, ValueError):
    pass


class ZeroDiagonal(SicsError):
    pass


class TooManyFailures(SicsError):
    pass


class ShapeMismatch(SicsError, ValueError):
    pass


class ConfigError(ValueError):
    """Invalid user configuration (CLI exit status 2)."""


class ParseError(ConfigError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class RaggedRows(ParseError):
    pass


class CountUnreachable(UserWarning):
    """The LASSO path skipped the requested number of nonzeros."""


class DegenerateSpectrum(UserWarning):
    """Adjacent generalized kurtoses coincide; components are not identifiable."""


class NoConvergenceWarning(UserWarning):
    pass
