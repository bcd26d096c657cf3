"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when caller-supplied data violates a documented precondition."""


class InvariantError(RuntimeError):
    """Raised when an internal consistency condition is broken."""


class IndexFormatError(ValueError):
    """Raised when an index file is malformed, truncated or version-incompatible."""
