"""Selection-target bundles and the invariant training distribution.

A target bundle fixes everything that makes the selected equilibrium unique:
a full-support target joint, per-player target and cap approximation
parameters, a welfare tensor, and the two balance weights.  The named
parameterizations are factory recipes for these bundles.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import FloorTooLarge, ShapeMismatch, UnknownParameterization
from .games import GameShape, NormalFormGame, _standardize_tensor, check_joint, norm_scale

#: Default approximation weight ("much greater than one"): large enough that
#: the recovered epsilon snaps toward its target, small enough to keep the
#: dual problem well conditioned.
DEFAULT_RHO = 100.0
#: Default welfare weight for the welfare-seeking parameterizations.
DEFAULT_MU = 10.0

#: Floor applied to sampled Dirichlet target joints before renormalizing; the
#: primal recovery divides by sigma_hat-weighted sums, so full support is a
#: hard requirement.
DIRICHLET_FLOOR = 1e-6

PARAMETERIZATIONS = ("ME", "MT", "MU", "MWME", "MRE", "MS", "eME", "eMWME", "eMRE")
_ALIASES = {"εME": "eME", "εMWME": "eMWME", "εMRE": "eMRE"}


def canonical_parameterization(name: str) -> str:
    name = _ALIASES.get(name, name)
    if name not in PARAMETERIZATIONS:
        raise UnknownParameterization(
            f"unknown parameterization {name!r}; expected one of {PARAMETERIZATIONS}"
        )
    return name


@dataclass(frozen=True)
class Parameterization:
    """A named selection recipe plus the solution concept it targets."""

    name: str
    concept: str = "CCE"

    def __post_init__(self):
        object.__setattr__(self, "name", canonical_parameterization(self.name))
        if self.concept not in ("CE", "CCE"):
            raise UnknownParameterization(f"concept must be CE or CCE, got {self.concept!r}")


@dataclass(frozen=True)
class SelectionTargets:
    """Everything defining a unique selected equilibrium."""

    sigma_hat: np.ndarray  # full-support target joint over the joint space
    epsilon_hat: np.ndarray  # per-player target approximation parameter
    epsilon_cap: np.ndarray  # per-player cap, strictly above epsilon_hat
    welfare: np.ndarray  # welfare tensor over the joint space (may be zero)
    rho: float = DEFAULT_RHO
    mu: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "sigma_hat", check_joint(self.sigma_hat))
        object.__setattr__(self, "epsilon_hat", np.asarray(self.epsilon_hat, dtype=np.float64))
        object.__setattr__(self, "epsilon_cap", np.asarray(self.epsilon_cap, dtype=np.float64))
        object.__setattr__(self, "welfare", np.asarray(self.welfare, dtype=np.float64))
        if (self.sigma_hat <= 0).any():
            raise ShapeMismatch("target joint must have full support")
        if self.welfare.shape != self.sigma_hat.shape:
            raise ShapeMismatch("welfare tensor must match the joint shape")
        if (self.epsilon_hat >= self.epsilon_cap).any():
            raise ShapeMismatch("epsilon_hat must be strictly below epsilon_cap")
        if not self.rho > 0:
            raise ShapeMismatch("rho must be positive")
        if self.mu < 0:
            raise ShapeMismatch("mu must be nonnegative")

    @property
    def num_players(self) -> int:
        return self.sigma_hat.ndim


def make_targets(
    param: Parameterization | str,
    game: NormalFormGame,
    rng: np.random.Generator | None = None,
    *,
    rho: float = DEFAULT_RHO,
    mu: float = DEFAULT_MU,
    m=2,
    sigma_hat: np.ndarray | None = None,
) -> SelectionTargets:
    """Build the target bundle for a named parameterization.

    ``rng`` is required by the sampling recipes (MRE, MWME and the
    epsilon-variants).  MT requires an explicit ``sigma_hat``; no default
    distribution is assumed for it.
    """
    name = param.name if isinstance(param, Parameterization) else canonical_parameterization(param)
    shape = game.shape
    n, n_players = shape.joint_size, shape.num_players
    z = norm_scale(m, n)
    uniform = np.full(shape.strategies, 1.0 / n)
    zeros_w = np.zeros(shape.strategies)
    eps_hat = np.zeros(n_players)
    eps_cap = np.full(n_players, z)
    sig = uniform
    welfare = zeros_w
    mu_out = 0.0

    def _rng():
        if rng is None:
            raise ValueError(f"parameterization {name} requires an rng")
        return rng

    if name == "ME":
        pass
    elif name == "MT":
        if sigma_hat is None:
            raise ShapeMismatch("MT requires an explicit sigma_hat target")
        sig = check_joint(sigma_hat, shape)
    elif name == "MU":
        welfare = _standardize_tensor(sum(game.payoffs), m)
        mu_out = mu
    elif name == "MWME":
        welfare = sample_invariant_payoffs(shape, m, _rng(), batch=1)[0, 0]
        mu_out = mu
    elif name == "MRE":
        sig = _dirichlet_joint(shape, _rng())
    elif name == "MS":
        eps_hat = np.full(n_players, -z)
    elif name in ("eME", "eMWME", "eMRE"):
        eps_hat = _rng().uniform(-z, z, size=n_players)
        if name == "eMWME":
            welfare = sample_invariant_payoffs(shape, m, _rng(), batch=1)[0, 0]
            mu_out = mu
        elif name == "eMRE":
            sig = _dirichlet_joint(shape, _rng())

    return SelectionTargets(sig, eps_hat, eps_cap, welfare, rho=rho, mu=mu_out)


def _dirichlet_joint(shape: GameShape, rng: np.random.Generator) -> np.ndarray:
    sig = rng.dirichlet(np.ones(shape.joint_size))
    sig = np.maximum(sig, DIRICHLET_FLOOR)
    return (sig / sig.sum()).reshape(shape.strategies)


# ---------------------------------------------------------------------------
# invariant game sampling


def sample_invariant_payoffs(
    shape: GameShape, m, rng: np.random.Generator, batch: int = 1
) -> np.ndarray:
    """Sample a batch of per-player payoff tensors on the centered L_m sphere.

    Returns an array of shape [batch, N, |A_1|, ..., |A_N|].  Draw isotropic
    Gaussians, center each tensor, then rescale its L_m norm to Z_m; for m=2
    this is uniform on the centered sphere of radius sqrt(|A|).
    """
    n = shape.joint_size
    z = norm_scale(m, n)
    g = rng.standard_normal((batch, shape.num_players, n))
    g = g - g.mean(axis=-1, keepdims=True)
    ord_ = np.inf if m in (np.inf, "inf") else m
    norms = np.linalg.norm(g, ord=ord_, axis=-1, keepdims=True)
    g = g * (z / norms)
    return g.reshape((batch, shape.num_players) + shape.strategies)


def sample_invariant_game(shape: GameShape, m, rng: np.random.Generator) -> NormalFormGame:
    """Sample one standardized game from the invariant L_m subspace."""
    payoffs = sample_invariant_payoffs(shape, m, rng, batch=1)[0]
    return NormalFormGame(tuple(payoffs))


def sample_pure_joint_targets(
    shape: GameShape, floor: float, *, rho: float = DEFAULT_RHO, m=2
) -> list[SelectionTargets]:
    """One near-point-mass target joint per pure joint action.

    Each target puts 1 - (|A|-1)*floor on its joint and ``floor`` elsewhere,
    keeping full support for the relative-entropy objective.
    """
    n = shape.joint_size
    if floor <= 0 or floor * n >= 1.0:
        raise FloorTooLarge(f"floor {floor} infeasible for joint size {n}")
    z = norm_scale(m, n)
    out = []
    for idx in range(n):
        sig = np.full(n, floor)
        sig[idx] = 1.0 - (n - 1) * floor
        out.append(
            SelectionTargets(
                sig.reshape(shape.strategies),
                np.zeros(shape.num_players),
                np.full(shape.num_players, z),
                np.zeros(shape.strategies),
                rho=rho,
            )
        )
    return out


# ---------------------------------------------------------------------------
# file format ("targets" object inside the game document)


def targets_to_dict(targets: SelectionTargets, parameterization: str | None = None) -> dict:
    doc = {
        "rho": targets.rho,
        "mu": targets.mu,
        "sigma_hat": targets.sigma_hat.ravel(order="C").tolist(),
        "epsilon_hat": targets.epsilon_hat.tolist(),
        "welfare": targets.welfare.ravel(order="C").tolist(),
    }
    if parameterization is not None:
        doc["parameterization"] = parameterization
    return doc


def targets_from_dict(
    doc: dict,
    game: NormalFormGame,
    rng: np.random.Generator | None = None,
    m=2,
) -> SelectionTargets:
    """Materialize a targets document, falling back to its named recipe for
    any field not given explicitly."""
    shape = game.shape
    base = None
    if "parameterization" in doc:
        base = make_targets(
            doc["parameterization"],
            game,
            rng,
            rho=float(doc.get("rho", DEFAULT_RHO)),
            mu=float(doc.get("mu", DEFAULT_MU)),
            m=m,
            sigma_hat=_maybe_joint(doc.get("sigma_hat"), shape),
        )
    else:
        z = norm_scale(m, shape.joint_size)
        base = SelectionTargets(
            np.full(shape.strategies, 1.0 / shape.joint_size),
            np.zeros(shape.num_players),
            np.full(shape.num_players, z),
            np.zeros(shape.strategies),
            rho=float(doc.get("rho", DEFAULT_RHO)),
            mu=float(doc.get("mu", 0.0)),
        )
    kwargs = {}
    if "sigma_hat" in doc:
        kwargs["sigma_hat"] = _maybe_joint(doc["sigma_hat"], shape)
    if "epsilon_hat" in doc:
        kwargs["epsilon_hat"] = np.asarray(doc["epsilon_hat"], dtype=np.float64)
    if "welfare" in doc:
        kwargs["welfare"] = np.asarray(doc["welfare"], dtype=np.float64).reshape(
            shape.strategies, order="C"
        )
    if "rho" in doc:
        kwargs["rho"] = float(doc["rho"])
    if "mu" in doc:
        kwargs["mu"] = float(doc["mu"])
    return replace(base, **kwargs) if kwargs else base


def _maybe_joint(flat, shape: GameShape):
    if flat is None:
        return None
    return np.asarray(flat, dtype=np.float64).reshape(shape.strategies, order="C")
