"""Error hierarchy. The CLI maps these onto its exit codes."""

import typing


class DriftSEError(Exception):
    exit_code: int = 2


class ConfigError(DriftSEError, ValueError):
    exit_code = 1


class ShapeMismatchError(DriftSEError, ValueError):
    pass


class EmptyBatchError(DriftSEError, ValueError):
    pass


class NonFiniteError(DriftSEError, ValueError):
    pass


class SignalTooShortError(DriftSEError, ValueError):
    pass


class ParadigmMismatchError(DriftSEError, ValueError):
    pass


class BackwardWithoutForwardError(DriftSEError, RuntimeError):
    pass


class SamplerExhaustedError(DriftSEError, RuntimeError):
    pass


class NumericalError(DriftSEError, ArithmeticError):
    def __init__(self, message: str, diagnostics: dict[str, typing.Any] | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PropertyCheckError(DriftSEError):
    exit_code = 3


class DegenerateInputError(DriftSEError, ValueError):
    pass
