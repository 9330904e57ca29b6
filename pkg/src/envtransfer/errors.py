"""Exception hierarchy.

The CLI maps these onto exit codes: usage problems exit 1, data problems
exit 2, numeric failures exit 3.
"""


class EnvTransferError(Exception):
    exit_code = 1


class UsageError(EnvTransferError, ValueError):
    exit_code = 1


class SpecError(EnvTransferError, ValueError):
    """A synthetic scenario that cannot be realised (e.g. negative means)."""

    exit_code = 1


class DataError(EnvTransferError, ValueError):
    exit_code = 2


class DegenerateError(EnvTransferError, ArithmeticError):
    """A fit has no identifiable solution (constant regressor, etc.)."""

    exit_code = 3


class InsufficientPairsError(EnvTransferError):
    """Fewer than two matched pairs; the option cannot be tested."""

    exit_code = 3


class SingleClassError(EnvTransferError):
    """Validity labels contain only one class; no classifier exists."""

    exit_code = 3
