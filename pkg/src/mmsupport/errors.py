"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced unusable values."""


class NonIntegrableError(RuntimeError):
    """A maximized-likelihood integrand does not decay; the normalizer diverges."""
