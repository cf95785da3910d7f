"""Exception types shared across the package.

The CLI maps these onto process exit codes (see cli.main): configuration
problems exit 2, data problems exit 3, numeric failures exit 4.  Library code
raises them directly; nothing in here should ever be caught and swallowed
inside the library itself.
"""

from __future__ import annotations


class SeriesDiffError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(SeriesDiffError, ValueError):
    """A configuration value or function argument violates its contract."""


class DataError(SeriesDiffError, ValueError):
    """Input data is malformed, inconsistent, or degenerate."""


class NumericError(SeriesDiffError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""
