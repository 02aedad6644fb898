"""Exception hierarchy.

Each error class carries the CLI exit code it maps to.
"""


class FracBismutError(Exception):
    exit_code = 1


class ConfigError(FracBismutError, ValueError):
    """Invalid parameter, unknown key or missing input."""

    exit_code = 2


class GridMismatchError(ConfigError):
    pass


class DegeneracyError(FracBismutError):
    """A numerical certificate failed (singular Gramian, bridge residual, ...)."""

    exit_code = 3

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class KernelValidationError(DegeneracyError):
    pass


class CouplingError(DegeneracyError):
    pass


class DivergenceError(FracBismutError):
    """Euler state blew up; ``step`` is the first offending grid index."""

    exit_code = 4

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
