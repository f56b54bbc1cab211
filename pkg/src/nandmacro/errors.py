"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a model or estimator."""


class SingularReductionError(ArithmeticError):
    """Internal-node elimination hit a node without capacitance to eliminate."""


class BuildError(ValueError):
    """An ArraySpec and its state grid do not describe a circuit."""


class ConvergenceError(RuntimeError):
    """Newton iteration failed even after gmin and source stepping.

    Carries the last iterate (node name -> voltage) and the residual norm so
    callers can report where the solve got stuck.
    """

    def __init__(self, message, last_iterate=None, residual_norm=float("nan"), time=None):
        super().__init__(message)
        self.last_iterate = last_iterate or {}
        self.residual_norm = residual_norm
        self.time = time


class SingularCircuitError(ArithmeticError):
    """A linear system assembled from a circuit is singular."""


class NetlistError(ValueError):
    """A circuit cannot be written in the array netlist dialect."""


class NetlistParseError(ValueError):
    """Malformed or unsupported netlist text."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FitError(RuntimeError):
    """Parameter extraction cannot start or produced an invalid objective."""


class ConfigError(ValueError):
    """Invalid run configuration."""
