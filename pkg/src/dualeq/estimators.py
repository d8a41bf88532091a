"""Estimator-style wrappers around the oracle and the trained network.

Both classes follow the scikit-learn fit/predict and get_params/set_params
conventions so they drop into parameter searches, but their inputs are game
objects rather than 2-D feature arrays, so they do not claim full pipeline
compatibility.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .dual import recover_solution
from .network import EquilibriumNetwork, NetworkConfig
from .oracle import SolveConfig, solve
from .targets import make_targets
from .training import TrainConfig, train


class ExactEquilibriumSolver(BaseEstimator):
    """Per-game convex dual solves; fitting is a no-op.

    predict maps a list of games to their uniquely selected joints under the
    configured parameterization and concept.
    """

    def __init__(
        self,
        parameterization: str = "ME",
        concept: str = "CCE",
        rho: float = 100.0,
        mu: float = 10.0,
        seed: int = 0,
        solve_config: SolveConfig | None = None,
    ):
        self.parameterization = parameterization
        self.concept = concept
        self.rho = rho
        self.mu = mu
        self.seed = seed
        self.solve_config = solve_config

    def fit(self, X=None, y=None):
        self.rng_ = np.random.default_rng(self.seed)
        return self

    def solve_one(self, game, targets=None):
        if not hasattr(self, "rng_"):
            self.fit()
        if targets is None:
            targets = make_targets(
                self.parameterization, game, self.rng_, rho=self.rho, mu=self.mu
            )
        return solve(game, targets, self.concept, self.solve_config)

    def predict(self, games):
        return [self.solve_one(g).solution.sigma for g in games]


class NeuralEquilibriumSolver(BaseEstimator):
    """Unsupervised-trained amortized solver.

    fit runs the training loop on freshly sampled games (inputs are ignored,
    matching the infinite-distribution regime); predict runs one forward pass
    per game and recovers the primal joint from the predicted duals.
    """

    def __init__(
        self,
        shape: tuple[int, ...] = (2, 2),
        parameterization: str = "ME",
        concept: str = "CCE",
        total_steps: int = 1000,
        batch_size: int = 256,
        learning_rate: float = 4e-4,
        seed: int = 0,
        network_config: NetworkConfig | None = None,
        checkpoint_dir: str | None = None,
    ):
        self.shape = shape
        self.parameterization = parameterization
        self.concept = concept
        self.total_steps = total_steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.network_config = network_config
        self.checkpoint_dir = checkpoint_dir

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            shape=tuple(self.shape),
            concept=self.concept,
            parameterization=self.parameterization,
            batch_size=self.batch_size,
            total_steps=self.total_steps,
            learning_rate=self.learning_rate,
            seed=self.seed,
            eval_games=0,
            checkpoint_dir=self.checkpoint_dir,
            network=self.network_config,
        )

    def fit(self, X=None, y=None):
        self.network_, self.log_ = train(self._train_config())
        self.rng_ = np.random.default_rng(self.seed)
        return self

    @classmethod
    def from_checkpoint(cls, path: str, **kwargs) -> "NeuralEquilibriumSolver":
        est = cls(**kwargs)
        est.network_ = EquilibriumNetwork.load(path)
        est.concept = est.network_.config.concept
        est.rng_ = np.random.default_rng(est.seed)
        est.log_ = None
        return est

    def predict_one(self, game, targets=None):
        if targets is None:
            targets = make_targets(self.parameterization, game, self.rng_)
        duals = self.network_.forward(game, targets)
        return recover_solution(game, targets, duals)

    def predict(self, games):
        return [self.predict_one(g).sigma for g in games]
