"""Exception hierarchy shared by the numerical modules."""


class HardyHallError(Exception):
    """Base class for all package errors."""


class DomainError(HardyHallError, ValueError):
    """Argument outside the domain where an expansion or formula is trusted."""


class ConvergenceError(HardyHallError, RuntimeError):
    """An iterative solver did not converge within its iteration budget."""


class CollisionSuspected(HardyHallError):
    """Two zeros are numerically indistinguishable from a collision.

    Raised when a zero is not certifiably simple, when two refined roots are
    closer than the collision tolerance, or when a grid cell shows a tangency.
    ``where`` holds the offending bracket ``(lo, hi)`` and ``s`` the homotopy
    parameter when the error is raised from inside a hall certification.
    """

    def __init__(self, message, where=None, s=None):
        super().__init__(message)
        self.where = where
        self.s = s

    def to_dict(self):
        return {
            "error": "CollisionSuspected",
            "message": str(self),
            "where": None if self.where is None else [float(x) for x in self.where],
            "s": self.s,
        }


class SimplicityViolated(HardyHallError):
    """A zero passed to the sensitivity calculus has |Z'| below the floor."""


class TailTooLarge(HardyHallError):
    """Truncated Coulomb sum leaves a tail larger than the comparison tolerance."""


class ReflectionFailed(HardyHallError):
    """The reflected diffusion could not find an admissible step."""

    def __init__(self, message, step=None, seed=None):
        super().__init__(message)
        self.step = step
        self.seed = seed


class HallSamplingError(HardyHallError):
    """Rejection sampling exhausted its budget without a certified section."""


class CollisionError(HardyHallError):
    """Dyson Brownian motion particles collided even after step halving."""


class NonIntegrable(HardyHallError):
    """Adaptive quadrature failed to reach the requested accuracy."""
