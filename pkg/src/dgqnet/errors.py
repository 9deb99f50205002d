"""Exception taxonomy shared across the package."""


class DGQError(Exception):
    """Base class for all package-specific failures."""


class ShapeError(DGQError):
    """Operand dimensions are incompatible; the message names the axis."""


class ConfigError(DGQError):
    """A configuration value is outside its legal range."""


class DataError(DGQError):
    """A dataset file is missing, malformed, or inconsistent."""


class ContractError(DGQError):
    """An internal invariant was violated (non-scalar loss, bad state norm,
    architecture mismatch, non-finite training loss)."""
