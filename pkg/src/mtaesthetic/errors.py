"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MTAestheticError(Exception):
    exit_code = 1


class ContractViolation(MTAestheticError, ValueError):
    """A documented precondition on an argument was not met."""

    exit_code = 2


class NumericalError(MTAestheticError, ArithmeticError):
    exit_code = 3


class NotPSDError(NumericalError):
    pass


class SingularMatrixError(NumericalError):
    pass


class DegenerateSubtaskError(NumericalError):
    def __init__(self, index, value):
        super().__init__(f"subtask {index} has nonpositive variance {value!r}")
        self.index = index


class ConfigError(MTAestheticError, ValueError):
    exit_code = 2


class InputError(MTAestheticError, ValueError):
    exit_code = 2


class DataError(MTAestheticError, ValueError):
    exit_code = 2


class IngestionError(DataError):
    pass


class TrainingAborted(MTAestheticError, RuntimeError):
    exit_code = 3


class CheckpointError(MTAestheticError, ValueError):
    exit_code = 4
