"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (factorization, divergence, degeneracy)."""
