"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class DataError(ValueError):
    """Malformed or inconsistent input data (parse and validation failures)."""


class ShapeError(ValueError):
    """Incompatible tensor shapes."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class DegenerateBatchError(ValueError):
    """A loss was asked to operate on too few nodes to be meaningful."""


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""
