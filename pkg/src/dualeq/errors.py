"""Exception types shared across the package."""


class DualeqError(Exception):
    """Base class for all domain errors."""


class ShapeMismatch(DualeqError):
    """Tensor or dual-variable shapes are inconsistent with the game."""


class ConstantPayoffError(DualeqError):
    """A payoff tensor is constant and cannot be standardized."""


class UnknownParameterization(DualeqError):
    """Parameterization name is not one of the known rows."""


class FloorTooLarge(DualeqError):
    """Pure-joint target floor leaves no mass for the target joint."""


class NonCubicStackRequested(DualeqError):
    """Player-stacked duals require all players to have equal strategy counts."""


class NotZeroSum(DualeqError):
    """Operation requires a two-player zero-sum game."""


class FactViolated(DualeqError):
    """A fixture's documented fact failed re-verification."""


class NonFiniteDetected(DualeqError):
    """A tensor operation produced NaN or infinity."""


class NonFiniteLoss(DualeqError):
    """Training loss became non-finite; aborting rather than masking."""
