"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid user-supplied argument (bad shape, non-finite entry, out of range)."""


class CapacityError(RuntimeError):
    """A requested computation exceeds a configured size or horizon cap."""


class NonConvergenceError(RuntimeError):
    """An iterative computation failed to certify its result within its cap."""


class InternalError(RuntimeError):
    """A numerical state that valid input can never produce."""
