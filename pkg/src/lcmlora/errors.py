"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """An operation was called outside its precondition."""


class OracleError(RuntimeError):
    """A test oracle could not be trusted or was misconfigured."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class MergeError(KeyError):
    """A delta references a layer the base model does not have."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class PreconditionError(RuntimeError):
    """A pipeline stage is missing an input artifact."""


class TrainingError(FloatingPointError):
    """Training produced a non-finite or divergent loss."""
