"""Normal-form games, invariant standardization, and deviation-gain tensors.

Payoffs are dense float64 numpy arrays over the joint strategy space, one
tensor per player.  Tensors are stored in C (row-major) order, so the flat
joint index of a profile ``(a_1, ..., a_N)`` is given by
``numpy.ravel_multi_index(profile, shape, order="C")``: the last player's
strategy index varies fastest.  :func:`joint_index` and :func:`joint_profile`
expose this bijection.

All functions here are pure and safe to call from multiple threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate
from scipy.special import erf

from .errors import ConstantPayoffError, NotZeroSum, ShapeMismatch

#: Absolute tolerance for "sums to one" distribution checks.  Double-precision
#: accumulation over up to ~1e6 joints stays well inside this budget.
DIST_TOL = 1e-9


@dataclass(frozen=True)
class GameShape:
    """Shape of a normal-form game: strategy counts per player."""

    strategies: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(int(s) for s in self.strategies))
        if self.num_players < 2:
            raise ShapeMismatch(f"need at least 2 players, got {self.num_players}")
        if any(s < 2 for s in self.strategies):
            raise ShapeMismatch(f"every player needs >= 2 strategies, got {self.strategies}")

    @property
    def num_players(self) -> int:
        return len(self.strategies)

    @property
    def joint_size(self) -> int:
        return int(np.prod(self.strategies))

    @property
    def is_cubic(self) -> bool:
        return len(set(self.strategies)) == 1

    def __str__(self) -> str:
        return "x".join(str(s) for s in self.strategies)

    @staticmethod
    def parse(text: str) -> "GameShape":
        """Parse an ``AxBxC`` shape string."""
        try:
            return GameShape(tuple(int(t) for t in text.lower().split("x")))
        except ValueError as exc:
            raise ShapeMismatch(f"cannot parse shape {text!r}") from exc


@dataclass(frozen=True)
class NormalFormGame:
    """A normal-form game: one payoff tensor per player over the joint space."""

    payoffs: tuple[np.ndarray, ...]

    def __post_init__(self):
        payoffs = tuple(np.asarray(g, dtype=np.float64) for g in self.payoffs)
        object.__setattr__(self, "payoffs", payoffs)
        shape = GameShape(payoffs[0].shape)
        if len(payoffs) != shape.num_players:
            raise ShapeMismatch(
                f"{len(payoffs)} payoff tensors for a {shape.num_players}-player shape"
            )
        for g in payoffs:
            if g.shape != payoffs[0].shape:
                raise ShapeMismatch("payoff tensors must all share the joint shape")
            if not np.isfinite(g).all():
                raise ShapeMismatch("payoff entries must be finite")

    @property
    def shape(self) -> GameShape:
        return GameShape(self.payoffs[0].shape)

    @property
    def num_players(self) -> int:
        return len(self.payoffs)


def joint_index(shape: GameShape, profile) -> int:
    """Flat row-major index of a joint strategy profile."""
    return int(np.ravel_multi_index(tuple(profile), shape.strategies, order="C"))


def joint_profile(shape: GameShape, index: int) -> tuple[int, ...]:
    """Inverse of :func:`joint_index`."""
    return tuple(int(i) for i in np.unravel_index(index, shape.strategies, order="C"))


def check_joint(sigma: np.ndarray, shape: GameShape | None = None) -> np.ndarray:
    """Validate a joint distribution; returns it as a float64 array."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if shape is not None and sigma.shape != shape.strategies:
        raise ShapeMismatch(f"joint shape {sigma.shape} != game shape {shape.strategies}")
    if (sigma < -DIST_TOL).any():
        raise ShapeMismatch("joint distribution has negative entries")
    if abs(float(sigma.sum()) - 1.0) > DIST_TOL:
        raise ShapeMismatch(f"joint distribution sums to {sigma.sum()}, not 1")
    return sigma


# ---------------------------------------------------------------------------
# standardization


def z_sigma(shape: GameShape) -> float:
    """Scale constant for centered target joints: |A| * sqrt((|A|+1)/(|A|-1)).

    Derived from the element variance of a flat Dirichlet distribution.
    """
    n = shape.joint_size
    return n * np.sqrt((n + 1.0) / (n - 1.0))


@lru_cache(maxsize=None)
def _expected_max_abs_normal(n: int) -> float:
    # E[max_i |z_i|] for n iid standard normals, via
    # E[max|z|] = int_0^inf (1 - P(max <= t)) dt with P(|z| <= t) = erf(t/sqrt(2)).
    val, _ = integrate.quad(lambda t: 1.0 - erf(t / np.sqrt(2.0)) ** n, 0.0, np.inf)
    return float(val)


def norm_scale(m, joint_size: int) -> float:
    """Scale constant Z_m so that unit-variance elements have L_m norm Z_m.

    * m=2: Z_2 = sqrt(|A|) (mean of the chi-squared distribution).
    * m=1: Z_1 = |A| * sqrt(2/pi) (mean absolute value of a standard normal).
    * m=inf: Z_inf = E[max_i |z_i|] over |A| iid standard normals, computed by
      quadrature; grows like sqrt(2 ln |A|).
    """
    n = joint_size
    if m == 2:
        return float(np.sqrt(n))
    if m == 1:
        return n * float(np.sqrt(2.0 / np.pi))
    if m in (np.inf, "inf"):
        return _expected_max_abs_normal(n)
    raise ValueError(f"norm order must be 1, 2 or inf, got {m!r}")


def _standardize_tensor(g: np.ndarray, m) -> np.ndarray:
    centered = g - g.mean()
    norm = np.linalg.norm(centered.ravel(), ord=np.inf if m == "inf" else m)
    if norm <= 1e-300:
        raise ConstantPayoffError("payoff tensor is constant; zero norm after centering")
    return centered * (norm_scale(m, g.size) / norm)


def standardize_payoffs(game: NormalFormGame, m=2) -> NormalFormGame:
    """Center each player's payoffs and scale their L_m norm to Z_m.

    The scaling factor is strictly positive so the equilibrium sets are
    unchanged.  Raises :class:`ConstantPayoffError` on a constant tensor.
    """
    return NormalFormGame(tuple(_standardize_tensor(g, m) for g in game.payoffs))


def is_standardized(game: NormalFormGame, m=2, tol: float = 1e-6) -> bool:
    z = norm_scale(m, game.shape.joint_size)
    for g in game.payoffs:
        if abs(g.mean()) > tol:
            return False
        if abs(np.linalg.norm(g.ravel(), ord=np.inf if m == "inf" else m) - z) > tol * z:
            return False
    return True


# ---------------------------------------------------------------------------
# deviation gains


def cce_deviation_gains(game: NormalFormGame) -> list[np.ndarray]:
    """Per player p, tensor D[a'_p, a] = G_p(a'_p, a_-p) - G_p(a).

    Zero on the slice where the deviation equals the played strategy.
    """
    gains = []
    for p, g in enumerate(game.payoffs):
        dev = np.moveaxis(g, p, 0)  # [A_p, a_-p...] with a_-p in original order
        dev = np.expand_dims(dev, axis=p + 1)  # reinsert the played-strategy axis
        gains.append(dev - g[np.newaxis])
    return gains


def ce_deviation_gains(game: NormalFormGame) -> list[np.ndarray]:
    """Per player p, tensor D[a'_p, a''_p, a], nonzero only where a_p = a''_p.

    On that slice it equals the payoff change from playing a'_p instead of the
    recommended a''_p; the a'_p = a''_p diagonal is identically zero.
    """
    cce = cce_deviation_gains(game)
    gains = []
    for p, dev in enumerate(cce):
        n_p = game.shape.strategies[p]
        # indicator[a''_p, a] = 1 iff a_p == a''_p
        ind = np.eye(n_p)
        ind = ind.reshape((n_p,) + tuple(n_p if q == p else 1 for q in range(game.num_players)))
        gains.append(dev[:, np.newaxis] * ind[np.newaxis])
    return gains


def expected_deviation_gain(gains, sigma: np.ndarray) -> list[np.ndarray]:
    """Contract per-player gain tensors with the joint distribution.

    For CCE gains returns arrays of shape (|A_p|,); for CE gains
    (|A_p|, |A_p|).
    """
    n_joint_axes = sigma.ndim
    out = []
    for dev in gains:
        lead = dev.shape[: dev.ndim - n_joint_axes]
        out.append(dev.reshape(lead + (-1,)) @ sigma.ravel())
    return out


def marginals(sigma: np.ndarray) -> list[np.ndarray]:
    """Per-player strategy distributions sigma(a_p) = sum_{a_-p} sigma(a)."""
    n = sigma.ndim
    return [sigma.sum(axis=tuple(q for q in range(n) if q != p)) for p in range(n)]


def product_joint(margs) -> np.ndarray:
    """Outer product of per-player marginals."""
    out = np.array(1.0)
    for m in margs:
        out = np.multiply.outer(out, np.asarray(m))
    return out


def exploitability_of_marginals(game: NormalFormGame, sigma: np.ndarray) -> float:
    """Sum over players of the clipped best deviation gain against the
    product of the joint's marginals; zero iff that product is an exact NE."""
    sigma = check_joint(sigma, game.shape)
    prod = product_joint(marginals(sigma))
    gains = expected_deviation_gain(cce_deviation_gains(game), prod)
    return float(sum(max(0.0, g.max()) for g in gains))


def check_zero_sum(game: NormalFormGame, tol: float = 1e-9) -> None:
    """Raise :class:`NotZeroSum` unless the game is two-player zero-sum."""
    if game.num_players != 2 or np.abs(game.payoffs[0] + game.payoffs[1]).max() > tol:
        raise NotZeroSum("expected a two-player zero-sum game")


# ---------------------------------------------------------------------------
# permutations (used heavily by the equivariance tests)


def permute_strategies(game: NormalFormGame, player: int, perm) -> NormalFormGame:
    """Relabel one player's strategies: new index i plays old strategy perm[i]."""
    perm = np.asarray(perm)
    return NormalFormGame(tuple(np.take(g, perm, axis=player) for g in game.payoffs))


def permute_players(game: NormalFormGame, perm) -> NormalFormGame:
    """Relabel players: new player i is old player perm[i]."""
    perm = list(perm)
    return NormalFormGame(tuple(np.transpose(game.payoffs[p], axes=perm) for p in perm))


# ---------------------------------------------------------------------------
# file format

def game_to_dict(game: NormalFormGame, targets_doc: dict | None = None) -> dict:
    doc = {
        "shape": list(game.shape.strategies),
        "payoffs": [g.ravel(order="C").tolist() for g in game.payoffs],
    }
    if targets_doc is not None:
        doc["targets"] = targets_doc
    return doc


def game_from_dict(doc: dict) -> tuple[NormalFormGame, dict | None]:
    shape = tuple(int(s) for s in doc["shape"])
    payoffs = tuple(
        np.asarray(flat, dtype=np.float64).reshape(shape, order="C")
        for flat in doc["payoffs"]
    )
    return NormalFormGame(payoffs), doc.get("targets")


def save_game(path, game: NormalFormGame, targets_doc: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(game_to_dict(game, targets_doc), fh)


def load_game(path) -> tuple[NormalFormGame, dict | None]:
    with open(path) as fh:
        return game_from_dict(json.load(fh))
