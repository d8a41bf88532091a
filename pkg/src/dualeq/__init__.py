"""Unique (coarse) correlated equilibrium selection for normal-form games.

Exact per-game solving via convex dual minimization, plus an amortized
permutation-equivariant neural solver trained without supervision.
"""

from .dual import DualVariables, EquilibriumSolution, dual_gradient, dual_loss
from .games import GameShape, NormalFormGame, standardize_payoffs
from .oracle import SolveConfig, SolveReport, solve, warm_start_from
from .targets import Parameterization, SelectionTargets, make_targets, sample_invariant_game

__all__ = [
    "DualVariables",
    "EquilibriumSolution",
    "GameShape",
    "NormalFormGame",
    "Parameterization",
    "SelectionTargets",
    "SolveConfig",
    "SolveReport",
    "dual_gradient",
    "dual_loss",
    "make_targets",
    "sample_invariant_game",
    "solve",
    "standardize_payoffs",
    "warm_start_from",
]

__version__ = "0.1.0"
