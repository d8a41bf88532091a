"""Dual objective for uniquely-selected (C)CEs.

The selected equilibrium solves an entropy-regularized program whose dual is
an unconstrained-but-nonnegative minimization over per-player deviation
multipliers.  This module evaluates the dual loss, its analytic gradient, and
the primal recovery maps, all as pure numpy functions.

Conventions: CCE duals are arrays alpha_p[a'_p]; CE duals are full
|A_p| x |A_p| matrices alpha_p[a'_p, a''_p] with a hard zero diagonal
(deviating to the recommended strategy itself gains nothing, so that entry is
masked rather than packed away).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ShapeMismatch
from .games import NormalFormGame, cce_deviation_gains, ce_deviation_gains
from .targets import SelectionTargets


@dataclass(frozen=True)
class DualVariables:
    """Nonnegative dual deviation gains, one array per player."""

    concept: str
    alphas: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.concept not in ("CE", "CCE"):
            raise ShapeMismatch(f"concept must be CE or CCE, got {self.concept!r}")
        alphas = tuple(np.asarray(a, dtype=np.float64) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        want_ndim = 2 if self.concept == "CE" else 1
        for a in alphas:
            if a.ndim != want_ndim:
                raise ShapeMismatch(f"{self.concept} duals must be {want_ndim}-d per player")
            if self.concept == "CE" and a.shape[0] != a.shape[1]:
                raise ShapeMismatch("CE duals must be square per player")
            if (a < 0).any():
                raise ShapeMismatch("dual variables must be nonnegative")
            if self.concept == "CE" and np.abs(np.diagonal(a)).max(initial=0.0) > 0:
                raise ShapeMismatch("CE dual diagonal must be zero")

    @property
    def num_players(self) -> int:
        return len(self.alphas)

    def totals(self) -> np.ndarray:
        """Per-player sums of the dual entries."""
        return np.array([a.sum() for a in self.alphas])

    @staticmethod
    def zeros(game: NormalFormGame, concept: str) -> "DualVariables":
        sizes = game.shape.strategies
        if concept == "CE":
            return DualVariables(concept, tuple(np.zeros((s, s)) for s in sizes))
        return DualVariables(concept, tuple(np.zeros(s) for s in sizes))


@dataclass(frozen=True)
class EquilibriumSolution:
    """Recovered primal joint, per-player epsilon, and diagnostics."""

    sigma: np.ndarray
    epsilon: np.ndarray
    logits: np.ndarray
    loss_value: float


def deviation_gains(game: NormalFormGame, concept: str) -> list[np.ndarray]:
    """Concept-appropriate deviation-gain tensors."""
    if concept == "CCE":
        return cce_deviation_gains(game)
    if concept == "CE":
        return ce_deviation_gains(game)
    raise ShapeMismatch(f"concept must be CE or CCE, got {concept!r}")


def _check_compatible(game: NormalFormGame, duals: DualVariables) -> None:
    if duals.num_players != game.num_players:
        raise ShapeMismatch("dual player count does not match the game")
    for p, a in enumerate(duals.alphas):
        if a.shape[0] != game.shape.strategies[p]:
            raise ShapeMismatch(
                f"player {p} duals sized {a.shape} for {game.shape.strategies[p]} strategies"
            )


def logits(
    game: NormalFormGame,
    targets: SelectionTargets,
    duals: DualVariables,
    gains: list[np.ndarray] | None = None,
) -> np.ndarray:
    """l(a) = mu * W(a) - sum_p <alpha_p, A_p(., a)>."""
    _check_compatible(game, duals)
    if gains is None:
        gains = deviation_gains(game, duals.concept)
    out = targets.mu * targets.welfare
    for alpha, dev in zip(duals.alphas, gains):
        out = out - np.tensordot(alpha, dev, axes=alpha.ndim)
    return out


def primal_joint(targets: SelectionTargets, logit_values: np.ndarray) -> np.ndarray:
    """sigma(a) proportional to sigma_hat(a) * exp(l(a)), max-stabilized."""
    x = np.log(targets.sigma_hat) + logit_values
    x = x - x.max()
    e = np.exp(x)
    return e / e.sum()


def primal_epsilon(targets: SelectionTargets, duals: DualVariables) -> np.ndarray:
    """eps_p = (eps_hat_p - cap_p) * exp(-sum(alpha_p)/rho) + cap_p.

    Always in [eps_hat_p, cap_p): zero duals give the target exactly; large
    duals relax toward (never reaching) the cap.
    """
    return (targets.epsilon_hat - targets.epsilon_cap) * np.exp(
        -duals.totals() / targets.rho
    ) + targets.epsilon_cap


def dual_loss(
    game: NormalFormGame,
    targets: SelectionTargets,
    duals: DualVariables,
    gains: list[np.ndarray] | None = None,
) -> float:
    """The convex dual objective to be minimized over nonnegative duals."""
    l = logits(game, targets, duals, gains)
    lse = float(logsumexp(np.log(targets.sigma_hat) + l))
    eps = primal_epsilon(targets, duals)
    return lse + float(targets.epsilon_cap @ duals.totals()) - targets.rho * float(eps.sum())


def dual_gradient(
    game: NormalFormGame,
    targets: SelectionTargets,
    duals: DualVariables,
    gains: list[np.ndarray] | None = None,
) -> list[np.ndarray]:
    """dL/dalpha_p(.) = eps_p - E_sigma[A_p(., a)], with sigma recovered from
    the current duals; CE diagonal entries are forced to zero."""
    if gains is None:
        gains = deviation_gains(game, duals.concept)
    sigma = primal_joint(targets, logits(game, targets, duals, gains))
    eps = primal_epsilon(targets, duals)
    grads = []
    for p, (alpha, dev) in enumerate(zip(duals.alphas, gains)):
        lead = dev.shape[: alpha.ndim]
        expected = dev.reshape(lead + (-1,)) @ sigma.ravel()
        g = eps[p] - expected
        if duals.concept == "CE":
            np.fill_diagonal(g, 0.0)
        grads.append(g)
    return grads


def recover_solution(
    game: NormalFormGame,
    targets: SelectionTargets,
    duals: DualVariables,
    gains: list[np.ndarray] | None = None,
) -> EquilibriumSolution:
    """Assemble the primal solution implied by a set of duals."""
    if gains is None:
        gains = deviation_gains(game, duals.concept)
    l = logits(game, targets, duals, gains)
    return EquilibriumSolution(
        sigma=primal_joint(targets, l),
        epsilon=primal_epsilon(targets, duals),
        logits=l,
        loss_value=dual_loss(game, targets, duals, gains),
    )
