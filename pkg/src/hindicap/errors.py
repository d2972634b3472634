"""Shared exception hierarchy.

The CLI maps these onto exit codes: DataError (and subclasses) exit with
code 2, usage problems with code 1.
"""


class HindicapError(Exception):
    """Base class for all errors raised by this package."""


class DataError(HindicapError):
    """Input data is missing, malformed, or inconsistent."""
