"""Exception hierarchy shared by the library and the CLI.

The CLI maps these onto exit codes: data problems exit 2, numeric problems
exit 3.
"""


class DivGNNError(Exception):
    """Base class for all library errors."""


class InputError(DivGNNError, ValueError):
    """An argument violates a documented precondition."""


class DataFormatError(DivGNNError, ValueError):
    """A dataset file is malformed or inconsistent with its siblings."""


class CapacityError(DivGNNError, ValueError):
    """A category block does not fit the configured identity width."""


class NumericError(DivGNNError, ArithmeticError):
    """An iterative routine failed to converge or produced non-finite values."""


class StateError(DivGNNError, RuntimeError):
    """An object was used out of order (e.g. optimizer step without gradients)."""
