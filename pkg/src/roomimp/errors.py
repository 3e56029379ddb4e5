"""Exception types shared across the toolkit.

Configuration-shaped problems derive from :class:`ValueError` so callers can
catch them wholesale; numerical failures carry diagnostics and derive from
:class:`ArithmeticError`.
"""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class OutOfDomainError(ValueError):
    """A point lies outside the room (or outside the closed box)."""


class SingularityError(ValueError):
    """Evaluation point coincides with the source singularity."""


class InvalidImpedanceError(ValueError):
    """Impedance value outside the admissible right half-plane (or zero)."""


class InvalidSpecError(ValueError):
    """Malformed prior/noise/scenario specification."""


class InvalidMomentsError(ValueError):
    """Moments passed to the density fit are not realizable."""


class PlacementError(ValueError):
    """Not enough admissible grid points to place the microphones."""


class SingularSystemError(ArithmeticError):
    """Direct factorization found the system numerically singular.

    Usually means the wave number sits at or near a discrete resonance of the
    current mesh.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateWeightsError(ArithmeticError):
    """All likelihood weights underflowed to zero at double precision.

    Signals either a severe model-data misfit or far too few samples; the
    largest log-likelihood seen is kept for diagnostics.
    """

    def __init__(self, message, max_loglik=None):
        super().__init__(message)
        self.max_loglik = max_loglik
