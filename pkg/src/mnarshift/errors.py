"""Exception types raised across the package."""


class MnarShiftError(Exception):
    pass


class ConfigError(MnarShiftError, ValueError):
    pass


class CalibrationError(MnarShiftError):
    def __init__(self, indicator: str, message: str):
        super().__init__(f"{indicator}: {message}")
        self.indicator = indicator


class SchemaError(MnarShiftError, ValueError):
    def __init__(self, message: str, columns=()):
        super().__init__(message if not columns else f"{message}: {', '.join(map(str, columns))}")
        self.columns = tuple(columns)


class ImputationError(MnarShiftError):
    pass


class SamplerError(ImputationError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class SingularDesignError(MnarShiftError, ArithmeticError):
    pass


class ConvergenceError(MnarShiftError):
    def __init__(self, message: str, n_iter: int, grad_norm: float):
        super().__init__(f"{message} after {n_iter} iterations (gradient norm {grad_norm:.3g})")
        self.n_iter = n_iter
        self.grad_norm = grad_norm


class SeparationError(ConvergenceError):
    pass


class WeightError(MnarShiftError):
    pass
