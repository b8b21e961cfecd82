"""Exception types raised across the toolkit."""


class DrkitError(Exception):
    """Base class for toolkit errors."""


class ShapeError(DrkitError, ValueError):
    pass


class NonFiniteError(DrkitError, ArithmeticError):
    """A toolkit operation produced or received NaN/Inf."""


class StaleCacheError(DrkitError, RuntimeError):
    """A layer cache was used after the parameters it was computed with changed."""


class DataError(DrkitError, ValueError):
    """Malformed dataset, manifest, or image."""


class ConfigError(DrkitError, ValueError):
    pass
