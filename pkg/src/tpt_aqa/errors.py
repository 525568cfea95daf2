"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside an operation's mathematical domain."""


class ContractError(ValueError):
    """A precondition on the call was violated."""


class ConfigError(ValueError):
    """A configuration value is invalid."""


class SamplingError(ValueError):
    """No eligible sample exists for a draw."""


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or does not match the model."""


class NumericError(FloatingPointError):
    """A non-finite value appeared in a forward or backward pass."""
