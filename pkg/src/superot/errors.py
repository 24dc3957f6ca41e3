"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: contract/schema problems -> 1,
data problems -> 2, numerical/training problems -> 3.
"""


class SuperOTError(Exception):
    exit_code = 1


class ContractError(SuperOTError, ValueError):
    """A precondition of an operation was violated."""


class ShapeError(ContractError):
    pass


class SchemaError(ContractError):
    """Invalid experiment configuration."""


class DataError(SuperOTError):
    exit_code = 2


class ParseError(DataError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DegenerateCellError(DataError, ValueError):
    def __init__(self, cell_ids):
        self.cell_ids = list(cell_ids)
        shown = ", ".join(self.cell_ids[:10])
        more = "" if len(self.cell_ids) <= 10 else f" (+{len(self.cell_ids) - 10} more)"
        super().__init__(f"all-zero expression rows for cells: {shown}{more}")


class CapacityError(DataError, ValueError):
    def __init__(self, requested, maximum):
        self.requested = requested
        self.maximum = maximum
        super().__init__(f"requested {requested} pairs but only {maximum} eligible day-2 cells")


class IntegrityError(DataError):
    """Artifacts do not match the inputs they claim to derive from."""


class NumericalError(SuperOTError, ArithmeticError):
    exit_code = 3


class DomainError(NumericalError, ValueError):
    """Function evaluated outside its domain (e.g. log of a non-positive value)."""


class NonFiniteError(NumericalError, FloatingPointError):
    pass


class SolverError(NumericalError):
    pass


class TrainingError(NumericalError):
    """Training diverged; ``checkpoint`` holds the last finite state."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
