"""Exception hierarchy shared by all modules."""


class QTrendError(Exception):
    """Base class for errors raised by qtrend."""


class DimensionError(QTrendError, ValueError):
    pass


class FactorizationError(QTrendError, ArithmeticError):
    pass


class LayoutError(QTrendError, ValueError):
    pass


class SelectionError(QTrendError, ValueError):
    pass


class InputError(QTrendError, ValueError):
    """Malformed user input (CSV contents, config values)."""


class ConvergenceError(QTrendError, RuntimeError):
    """An iterative solver hit its iteration cap.

    The residuals at the last iterate are kept on the exception so callers
    can report how far from convergence the solve was.
    """

    def __init__(self, message, iterations=None, primal_residual=None,
                 dual_residual=None, result=None):
        super().__init__(message)
        self.iterations = iterations
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual
        self.result = result
