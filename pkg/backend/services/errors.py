"""Exception hierarchy shared by all services; the CLI maps it onto exit codes."""


class FragError(Exception):
    exit_code = 1


class InvalidParameterError(FragError):
    exit_code = 2


class ConfigValidationError(FragError):
    exit_code = 2

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(f"{len(self.violations)} configuration violation(s): "
                         + '; '.join(self.violations))


class NumericalError(FragError):
    exit_code = 3


class StitchingWindowError(NumericalError):
    pass


class TuningError(NumericalError):
    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or []
        super().__init__(message)


class PropagationError(NumericalError):
    def __init__(self, message, radius=None):
        self.radius = radius
        if radius is not None:
            message = f"{message} (R = {radius:.6g} a0)"
        super().__init__(message)


class ClosedSystemError(NumericalError):
    pass


class InsufficientSpectrumError(NumericalError):
    pass


class GridError(NumericalError):
    pass
