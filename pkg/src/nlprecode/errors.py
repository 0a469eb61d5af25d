"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ConfigurationError(ValueError):
    """A configuration value is invalid or a required artifact is missing."""


class ContractError(RuntimeError):
    """A call violated an API precondition."""


class DegenerateInputError(ValueError):
    """Input is degenerate (zero matrix, rank-deficient channel, ...)."""


class FormatError(ValueError):
    """A file on disk is truncated or does not match its manifest."""


class OptimizerError(RuntimeError):
    """An iterative optimizer failed to produce a finite result."""
