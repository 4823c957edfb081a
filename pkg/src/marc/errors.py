"""Exception taxonomy shared by the library and the command line tool.

The CLI maps these onto exit codes: validation problems exit 2, file and
format problems exit 3, numerical failures exit 4.
"""


class MarcError(Exception):
    """Base class for everything raised deliberately by this package."""


class ValidationError(MarcError, ValueError):
    """Invalid argument, shape, label, mask, or configuration."""


class DegenerateMatrixError(ValidationError):
    """An input matrix has no usable structure (e.g. an all-zero span)."""


class FormatError(MarcError, ValueError):
    """A file does not follow one of the on-disk formats."""


class NumericalError(MarcError, RuntimeError):
    """A solver or factorization failed to produce finite results."""
