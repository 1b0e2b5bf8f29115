"""Exception types shared across the package."""


class N2sidError(Exception):
    """Base class for all package-specific errors."""


class SimulationOverflowError(N2sidError):
    """A state recursion produced non-finite values (unstable dynamics)."""


class SolverError(N2sidError):
    """The convex solver failed (singular system or diverging iterates)."""


class ConsistencyError(N2sidError):
    """An internal numerical identity was violated beyond tolerance."""
