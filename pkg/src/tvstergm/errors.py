"""Exception types shared across the package.

The CLI maps each class onto a process exit code.
"""


class TvstergmError(Exception):
    exit_code = 1


class InputError(TvstergmError, ValueError):
    """Malformed or inconsistent input data."""

    exit_code = 1


class ContractError(TvstergmError, ValueError):
    """A documented precondition of an operation was violated."""

    exit_code = 2


class NumericalError(TvstergmError, ArithmeticError):
    """The numerical routine failed (non-convergence, singular system)."""

    exit_code = 3
