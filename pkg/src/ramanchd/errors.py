"""Exception hierarchy.

The CLI maps the three top-level families onto exit codes:
``ConfigError`` -> 2, ``ConvergenceError`` -> 3, ``NumericalError`` -> 4.
"""


class RamanCHDError(Exception):
    """Base class for all package errors."""


class ConfigError(RamanCHDError, ValueError):
    """Invalid user input; ``field`` names the offending key when known."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class ParameterError(ConfigError):
    """A physical parameter violates its invariant."""


class DimensionError(RamanCHDError, ValueError):
    """Operator or truncation dimensions are inconsistent."""


class SensorRejected(ConfigError):
    """A sensor coupling exceeds the weak-coupling admissibility bound."""

    def __init__(self, message, check=None, field="sensors"):
        super().__init__(message, field=field)
        self.check = check


class ConvergenceError(RamanCHDError, RuntimeError):
    """Truncation search ran out of schedule.

    ``history`` holds the last two truncation results that were compared.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class NumericalError(RamanCHDError, ArithmeticError):
    """A computation produced an unusable result."""


class SolverError(NumericalError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateSteadyStateError(SolverError):
    """The Liouvillian kernel is not one-dimensional."""


class PropagationError(NumericalError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class VanishingDenominatorError(NumericalError):
    """A normalizing mean value (e.g. <a_phi>_ss) is numerically zero."""


class CutoffError(NumericalError):
    """A correlation has not decayed at the end of its integration window."""


class ImaginaryResidueError(NumericalError):
    """A quantity that must be real carries a large imaginary part."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
