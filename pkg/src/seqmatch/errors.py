"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`NumericError` exits with 1,
everything deriving from :class:`UsageError` or :class:`DimensionError`
exits with 2.
"""


class DimensionError(ValueError):
    """Operand shapes do not agree."""


class NumericError(FloatingPointError):
    """A computation produced or consumed a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StateError(RuntimeError):
    """An operation was called before the state it needs exists."""


class UsageError(ValueError):
    """Bad arguments, config values or input files."""
