"""Exception hierarchy.

Guard errors (capacity, step size, stability, CFL, grid range, escape) map to
CLI exit status 3; everything else that signals a failed check maps to 1.
"""

from __future__ import annotations


class BsdeLabError(Exception):
    """Base class for all package errors."""


class GuardError(BsdeLabError):
    """A configuration guard was violated before any numerics ran."""


class CapacityError(GuardError):
    pass


class StepSizeError(GuardError):
    """|f| h >= 1 somewhere: the tilted branch probabilities leave (0, 1)."""


class StabilityError(GuardError):
    pass


class CFLError(GuardError):
    def __init__(self, message: str, admissible_dt: float):
        super().__init__(message)
        self.admissible_dt = admissible_dt


class RangeError(GuardError):
    """Evaluation points fall outside a grid that must cover them."""


class RegionEscapeError(GuardError):
    def __init__(self, message: str, escape_rate: float):
        super().__init__(message)
        self.escape_rate = escape_rate


class TreeMismatchError(BsdeLabError, ValueError):
    pass


class MartingaleError(BsdeLabError):
    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(BsdeLabError):
    def __init__(self, message: str, distances, ratios):
        super().__init__(message)
        self.distances = list(distances)
        self.ratios = list(ratios)


class GradientBoundError(BsdeLabError):
    pass


class KBoundError(BsdeLabError):
    pass


class ScopeError(BsdeLabError, ValueError):
    pass


class QuadratureError(BsdeLabError):
    pass


class MaxPrincipleError(BsdeLabError):
    pass


class CertificationError(BsdeLabError):
    pass
