"""Exception hierarchy shared by all maxhom modules.

The CLI maps these onto exit codes: configuration problems exit with 2,
numerical failures with 3, property failures (which are report outcomes,
not exceptions) with 1.
"""


class MaxhomError(Exception):
    """Base class for all maxhom errors."""


class InputError(MaxhomError):
    """Invalid arguments or data handed to an operation."""


class ConfigurationError(MaxhomError):
    """Invalid experiment configuration (schema, CFL, missing keys)."""


class NumericalError(MaxhomError):
    """A solver failed to converge or produced non-finite values."""


class UnsupportedFieldError(InputError):
    """A coefficient field falls outside what a discretization supports."""
