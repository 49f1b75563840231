"""Exception types shared across the package."""


class DegenerateKernelError(ValueError):
    """Raised when a kernel matrix has no usable positive eigenvalues."""


class NumericError(RuntimeError):
    """Raised when a factorization or solve fails beyond recovery."""


class InsufficientDataError(ValueError):
    """Raised when an estimator is given fewer points than it needs."""
