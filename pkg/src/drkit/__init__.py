"""Diabetic retinopathy grading toolkit: a small CNN stack in numpy with a compiled kernel core."""
from .config import RunConfig, load_config, save_config
from .errors import ConfigError, DataError, DrkitError, NonFiniteError, ShapeError, StaleCacheError
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "RunConfig", "load_config", "save_config",
    "DrkitError", "ShapeError", "NonFiniteError", "StaleCacheError", "DataError", "ConfigError",
]
