"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


class NumericalFailureError(ArithmeticError):
    """Raised when a factorization, solve or evaluation breaks down."""
