"""Exception hierarchy shared by every module.

The CLI maps :class:`DataError` to exit code 2 and :class:`NumericalError`
to exit code 3.
"""


class Fast0TagError(Exception):
    pass


class DataError(Fast0TagError, ValueError):
    """Malformed input, contract violation, or inconsistent dimensions."""


class NumericalError(Fast0TagError, ArithmeticError):
    """Divergence or a non-finite value during optimization."""
