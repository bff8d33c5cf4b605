"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes: configuration and validation
problems exit 2, numerical and regime problems exit 3, resource limits exit 4.
"""


class BohmkitError(Exception):
    """Base class for all package errors."""


class ConfigurationError(BohmkitError):
    """Invalid grid, operator, potential or scenario configuration."""


class RangeError(BohmkitError):
    """A query point falls outside the domain a routine can evaluate."""


class NumericalError(BohmkitError):
    """A solver failed to meet its accuracy contract (residual, norm drift)."""


class EvaluationError(BohmkitError):
    """An estimator could not be formed, e.g. every sample was flagged."""


class RegimeError(BohmkitError):
    """The requested protocol is outside its validity regime."""


class ResourceError(BohmkitError):
    """A configured memory or dimension cap would be exceeded."""
