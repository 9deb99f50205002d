"""dgqnet: domain-generalized hybrid quantum-classical image classifier."""

from .errors import ConfigError, ContractError, DataError, DGQError, ShapeError
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "DGQError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "ContractError",
    "__version__",
]
