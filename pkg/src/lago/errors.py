"""Exception types shared across the library."""


class UnsupportedSmoothnessError(ValueError):
    """A derivative order was requested that the kernel family cannot provide."""


class IllConditionedKernelError(RuntimeError):
    """Kernel matrix factorization failed even with the nugget.

    Attributes
    ----------
    condition_estimate : float
        Spectral condition number estimate of the matrix that failed.
    """

    def __init__(self, message: str, condition_estimate: float):
        super().__init__(message)
        self.condition_estimate = condition_estimate


class InfeasibleExclusionError(RuntimeError):
    """The exclusion ball covers the whole design box; no feasible candidate."""
