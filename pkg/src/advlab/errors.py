"""Exception types shared across the package."""


class AdvlabError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(AdvlabError):
    """Tensor or graph shapes are inconsistent."""


class GraphError(AdvlabError):
    """Graph misuse, e.g. backward before forward."""


class NumericError(AdvlabError):
    """Non-finite values appeared where finite ones are required."""


class DivergenceError(NumericError):
    """Training or an optimization loop diverged."""


class FormatError(AdvlabError):
    """A binary file or document does not match its expected format."""


class ConfigError(AdvlabError):
    """A run configuration is invalid."""
