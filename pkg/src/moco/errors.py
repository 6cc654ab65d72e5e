"""Exception types shared across the package."""


class MocoError(Exception):
    pass


class InvalidInstanceError(MocoError, ValueError):
    pass


class InvalidParameterError(MocoError, ValueError):
    pass


class WrongKindError(MocoError, TypeError):
    pass


class ParseError(MocoError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ContractViolation(MocoError, RuntimeError):
    """A caller broke a precondition (e.g. acting on a terminal state)."""


class InfeasibleSolutionError(MocoError, ValueError):
    pass


class SizeLimitError(MocoError, ValueError):
    pass


class CorruptCheckpointError(MocoError, ValueError):
    pass


class ConfigError(MocoError, ValueError):
    pass


class TrainingError(MocoError, RuntimeError):
    pass


class DeadEnd(ContractViolation):
    """No feasible sparse action remains; the caller must take the fallback arc."""
