"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value violates its documented constraints."""


class ContractError(ValueError):
    """An input violates an operation's precondition (shape, bounds, ...)."""


class EmptyInputError(ContractError):
    """Not enough data to produce a single output."""


class UnsupportedOperationError(TypeError):
    """The operation is not defined for this kind of object."""


class DataFormatError(ContractError):
    """A file is missing, truncated, inconsistent or from a different run."""
