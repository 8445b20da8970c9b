"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or combination (CLI exit code 2)."""


class ParseError(ValueError):
    """Malformed input data. Carries the 1-based line number when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class DivergenceError(RuntimeError):
    """An iterate left the trust region (CLI exit code 3)."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class ReferenceSolveError(RuntimeError):
    """Reference solver hit its iteration cap. Carries the best iterate seen."""

    def __init__(self, message, best_x=None, best_grad_norm=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_grad_norm = best_grad_norm
