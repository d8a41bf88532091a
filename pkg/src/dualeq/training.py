"""Unsupervised training loop for the equilibrium network.

Each step samples a fresh batch of invariant-subspace games plus selection
targets, runs the network forward, and descends the expected convex dual
objective.  No oracle solution is ever read on the training path; the oracle
appears only in the frozen-set evaluation helper.  The gradient with respect
to the network's dual outputs is the analytic dual gradient, so backprop is
seeded through a linear surrogate loss instead of recording the dual
objective on the tape.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .dual import DualVariables, dual_gradient, dual_loss, recover_solution
from .errors import NonFiniteDetected, NonFiniteLoss
from .games import GameShape, NormalFormGame
from .harness import equilibrium_gap, solver_gap, uniform_joint
from .network import EquilibriumNetwork, NetworkConfig, assemble_batch
from .oracle import SolveConfig, solve
from .targets import (
    SelectionTargets,
    make_targets,
    sample_invariant_game,
    sample_invariant_payoffs,
)

# (fraction of total steps, learning-rate factor) pairs; the published
# hardware-scale schedule compressed proportionally to total_steps
DEFAULT_SCHEDULE = (
    (0.001, 1.0),
    (0.01, 0.6),
    (0.04, 0.3),
    (0.07, 0.1),
    (0.1, 0.06),
    (1.0, 0.03),
)


@dataclass(frozen=True)
class TrainConfig:
    shape: tuple[int, ...] = (2, 2)
    concept: str = "CCE"
    parameterization: str = "ME"
    batch_size: int = 256
    total_steps: int = 50_000
    learning_rate: float = 4e-4
    lr_schedule: tuple[tuple[float, float], ...] = DEFAULT_SCHEDULE
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    weight_decay: float = 1e-7
    grad_clip_fraction: float = 1e-3
    norm_order: float = 2.0
    seed: int = 0
    eval_every: int = 1000
    eval_games: int = 512
    checkpoint_dir: str | None = None
    network: NetworkConfig | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.total_steps < 1:
            raise ValueError("total_steps must be at least 1")
        fracs = [f for f, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(fracs, fracs[1:])):
            raise ValueError("schedule steps must be strictly increasing")
        if fracs and not 0.0 < fracs[-1] <= 1.0:
            raise ValueError("schedule fractions must end in (0, 1]")

    def network_config(self) -> NetworkConfig:
        if self.network is not None:
            return replace(self.network, concept=self.concept)
        return NetworkConfig(concept=self.concept, norm_order=self.norm_order)


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)

    def append(self, record: dict) -> None:
        if self.records and record["step"] <= self.records[-1]["step"]:
            raise ValueError("log steps must be monotone")
        self.records.append(record)


def learning_rate_at(config: TrainConfig, step: int) -> float:
    """Piecewise-constant schedule: the factor of the first breakpoint at or
    past the current fraction of total steps."""
    frac = step / config.total_steps
    factor = config.lr_schedule[-1][1]
    for boundary, f in config.lr_schedule:
        if frac <= boundary:
            factor = f
            break
    return config.learning_rate * factor


class Adam:
    """Standard Adam with bias correction, state keyed like the weights."""

    def __init__(self, weights: dict[str, np.ndarray], config: TrainConfig):
        self.beta1 = config.adam_beta1
        self.beta2 = config.adam_beta2
        self.epsilon = config.adam_epsilon
        self.weight_decay = config.weight_decay
        self.clip_fraction = config.grad_clip_fraction
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in weights.items()}
        self.v = {k: np.zeros_like(v) for k, v in weights.items()}

    def clip(self, grad: np.ndarray, weight: np.ndarray) -> np.ndarray:
        """Adaptive clipping: cap the gradient norm at a fraction of the
        parameter norm (with a floor so zero-initialized tensors can move)."""
        limit = self.clip_fraction * max(float(np.linalg.norm(weight)), 1e-3)
        norm = float(np.linalg.norm(grad))
        if norm > limit > 0:
            return grad * (limit / norm)
        return grad

    def step(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            w = weights[k]
            g = self.clip(g, w)
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            m_hat = self.m[k] / correct1
            v_hat = self.v[k] / correct2
            w -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
            if self.weight_decay > 0 and k.endswith("/w"):
                w -= self.weight_decay * w


# ---------------------------------------------------------------------------
# batch plumbing


def sample_batch(config: TrainConfig, rng: np.random.Generator):
    """Fresh games and targets; returns (games, targets, assembled input)."""
    shape = GameShape(tuple(config.shape))
    payoffs = sample_invariant_payoffs(
        shape, config.norm_order, rng, batch=config.batch_size
    )
    games = [NormalFormGame(tuple(p)) for p in payoffs]
    targets = [make_targets(config.parameterization, g, rng) for g in games]
    x = assemble_batch(
        payoffs,
        np.stack([t.sigma_hat for t in targets]),
        np.stack([t.epsilon_hat for t in targets]),
        np.stack([t.welfare for t in targets]),
        config.norm_order,
    )
    return games, targets, x


def _per_game_duals(concept: str, outputs: list[np.ndarray], i: int) -> DualVariables:
    return DualVariables(concept, tuple(out[i] for out in outputs))


def _batched_cce_gains(payoffs: np.ndarray) -> list[np.ndarray]:
    """Per player, D[b, a'_p, a] = G_p(a'_p, a_-p) - G_p(a); shape [B, A_p, A...]."""
    num_players = payoffs.shape[1]
    gains = []
    for p in range(num_players):
        g = payoffs[:, p]
        dev = np.moveaxis(g, 1 + p, 1)
        dev = np.expand_dims(dev, axis=p + 2)
        gains.append(dev - g[:, np.newaxis])
    return gains


def batch_loss_and_output_grads(
    concept: str,
    games: list[NormalFormGame],
    targets: list[SelectionTargets],
    outputs: list[np.ndarray],
):
    """Mean dual loss over the batch plus d(mean loss)/d(output) per player.

    Vectorized over the batch; agrees with the per-game dual_loss and
    dual_gradient to machine precision (see the trainer tests).
    """
    batch = len(games)
    num_players = len(outputs)
    payoffs = np.stack([np.stack(g.payoffs) for g in games])
    strategies = payoffs.shape[2:]
    joint = int(np.prod(strategies))
    sigma_hat = np.stack([t.sigma_hat for t in targets]).reshape(batch, joint)
    eps_hat = np.stack([t.epsilon_hat for t in targets])
    eps_cap = np.stack([t.epsilon_cap for t in targets])
    welfare = np.stack([t.welfare for t in targets])
    rho = np.array([t.rho for t in targets])
    mu = np.array([t.mu for t in targets])

    gains = _batched_cce_gains(payoffs)
    # logits l(a) = mu W(a) - sum_p <alpha_p, A_p(., a)>
    logit = mu.reshape((batch,) + (1,) * num_players) * welfare
    totals = np.empty((batch, num_players))
    for p, (alpha, dev) in enumerate(zip(outputs, gains)):
        if concept == "CE":
            # <alpha_p, A_p(., ., a)> collapses to sum_k alpha[k, a_p] D[k, a]
            # because the recommendation axis is tied to the played strategy
            sel_shape = (batch, strategies[p]) + tuple(
                strategies[p] if q == p else 1 for q in range(num_players)
            )
            logit = logit - (alpha.reshape(sel_shape) * dev).sum(axis=1)
            totals[:, p] = alpha.sum(axis=(1, 2))
        else:
            logit = logit - np.einsum("bk,bk...->b...", alpha, dev)
            totals[:, p] = alpha.sum(axis=1)

    x = np.log(sigma_hat) + logit.reshape(batch, joint)
    x_max = x.max(axis=1, keepdims=True)
    e = np.exp(x - x_max)
    z = e.sum(axis=1, keepdims=True)
    sigma = e / z
    lse = (x_max + np.log(z)).ravel()
    eps = (eps_hat - eps_cap) * np.exp(-totals / rho[:, None]) + eps_cap
    losses = lse + (eps_cap * totals).sum(axis=1) - rho * eps.sum(axis=1)

    grads = []
    for p, (alpha, dev) in enumerate(zip(outputs, gains)):
        if concept == "CE":
            # expected gain per (deviation, recommendation): average the
            # deviation tensor over all joints whose played strategy matches
            weighted = dev.reshape((batch, strategies[p], joint)) * sigma[:, None]
            other = tuple(
                2 + q for q in range(num_players) if q != p
            )
            full = weighted.reshape((batch, strategies[p]) + strategies)
            expected = full.sum(axis=other) if other else full
            g = eps[:, p, None, None] - expected
            idx = np.arange(strategies[p])
            g[:, idx, idx] = 0.0
        else:
            expected = np.einsum(
                "bkj,bj->bk", dev.reshape((batch, strategies[p], joint)), sigma
            )
            g = eps[:, p, None] - expected
        grads.append(g / batch)
    return float(losses.mean()), grads, losses


def train_step(
    network: EquilibriumNetwork,
    optimizer: Adam,
    games: list[NormalFormGame],
    targets: list[SelectionTargets],
    x: np.ndarray,
    lr: float,
) -> float:
    """One optimizer update; returns the batch mean dual loss."""
    tape, dual_tensors, params = network._forward(x, training=True)
    outputs = [d.data for d in dual_tensors]
    loss, out_grads, _ = batch_loss_and_output_grads(
        network.config.concept, games, targets, outputs
    )
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"batch mean dual loss is {loss}")
    # linear surrogate: sum of output * stop_gradient(dL/doutput), whose tape
    # gradient equals the chain rule through the analytic dual gradient
    terms = None
    for tensor, g in zip(dual_tensors, out_grads):
        term = ad.reduce_sum(ad.mul(tensor, tape.constant(g)), tuple(range(g.ndim)))
        terms = term if terms is None else ad.add(terms, term)
    tape.backward(terms)
    grads = {}
    for k, handle in params.items():
        if handle.grad is None:
            continue
        if not np.isfinite(handle.grad).all():
            raise NonFiniteLoss(f"non-finite gradient in {k!r}")
        grads[k] = handle.grad
    optimizer.step(network.weights, grads, lr)
    return loss


# ---------------------------------------------------------------------------
# frozen evaluation set


@dataclass(frozen=True)
class EvalSet:
    games: list[NormalFormGame]
    targets: list[SelectionTargets]
    x: np.ndarray
    oracle_sigmas: list[np.ndarray | None]
    uniform_solver_gap: float
    uniform_gap: float


def build_eval_set(config: TrainConfig, solve_config: SolveConfig | None = None) -> EvalSet:
    """Frozen games, targets, and cached oracle solutions for evaluation.

    Uses an RNG stream independent of the training stream so the eval set is
    identical across step counts for a fixed seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE7A1]))
    shape = GameShape(tuple(config.shape))
    games, targets, sigmas = [], [], []
    uni_sgaps, uni_gaps = [], []
    for _ in range(config.eval_games):
        game = sample_invariant_game(shape, config.norm_order, rng)
        t = make_targets(config.parameterization, game, rng)
        games.append(game)
        targets.append(t)
        report = solve(game, t, config.concept, solve_config)
        uni = uniform_joint(game)
        uni_gaps.append(equilibrium_gap(game, uni, 0.0, config.concept))
        if report.converged:
            sigmas.append(report.solution.sigma)
            uni_sgaps.append(solver_gap(report.solution.sigma, uni))
        else:
            sigmas.append(None)
    x = assemble_batch(
        np.stack([np.stack(g.payoffs) for g in games]),
        np.stack([t.sigma_hat for t in targets]),
        np.stack([t.epsilon_hat for t in targets]),
        np.stack([t.welfare for t in targets]),
        config.norm_order,
    )
    return EvalSet(
        games,
        targets,
        x,
        sigmas,
        float(np.mean(uni_sgaps)) if uni_sgaps else float("nan"),
        float(np.mean(uni_gaps)),
    )


def eval_during_training(
    network: EquilibriumNetwork, eval_set: EvalSet, concept: str
) -> tuple[float, float]:
    """(mean solver gap, mean equilibrium gap) of the network on the frozen set."""
    outputs = network.predict_batch(eval_set.x)
    sgaps, gaps = [], []
    for i, (game, t) in enumerate(zip(eval_set.games, eval_set.targets)):
        duals = _per_game_duals(concept, outputs, i)
        sol = recover_solution(game, t, duals)
        gaps.append(equilibrium_gap(game, sol.sigma, sol.epsilon, concept))
        star = eval_set.oracle_sigmas[i]
        if star is not None:
            sgaps.append(solver_gap(star, sol.sigma))
    return (
        float(np.mean(sgaps)) if sgaps else float("nan"),
        float(np.mean(gaps)),
    )


# ---------------------------------------------------------------------------
# driver


def _dump_diagnostic(config: TrainConfig, step: int, games, targets) -> str | None:
    if config.checkpoint_dir is None:
        return None
    path = os.path.join(config.checkpoint_dir, f"nonfinite_batch_step{step}.npz")
    np.savez(
        path,
        payoffs=np.stack([np.stack(g.payoffs) for g in games]),
        sigma_hat=np.stack([t.sigma_hat for t in targets]),
        epsilon_hat=np.stack([t.epsilon_hat for t in targets]),
        welfare=np.stack([t.welfare for t in targets]),
    )
    return path


def _checkpoint_paths(config: TrainConfig):
    d = config.checkpoint_dir
    return (
        os.path.join(d, "config.json"),
        os.path.join(d, "metrics.csv"),
        os.path.join(d, "params_latest.json"),
    )


def train(
    config: TrainConfig,
    eval_set: EvalSet | None = None,
    network: EquilibriumNetwork | None = None,
    progress: bool = False,
) -> tuple[EquilibriumNetwork, TrainLog]:
    """Run the full loop; returns the trained network and the metric log.

    The oracle is touched only through ``eval_set`` (built here when not
    supplied); training batches never see a solved game.
    """
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7EA1]))
    if network is None:
        net_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x11A7]))
        network = EquilibriumNetwork(config.network_config(), net_rng)
        _, _, calib_x = sample_batch(config, rng)
        network.calibrate(calib_x)
    if eval_set is None and config.eval_games > 0:
        eval_set = build_eval_set(config)
    log = TrainLog()
    writer = None
    if config.checkpoint_dir is not None:
        os.makedirs(config.checkpoint_dir, exist_ok=True)
        cfg_path, metrics_path, params_path = _checkpoint_paths(config)
        doc = {
            k: (list(v) if isinstance(v, tuple) else v)
            for k, v in vars(config).items()
            if k != "network"
        }
        doc["network"] = config.network_config().to_dict()
        with open(cfg_path, "w") as fh:
            json.dump(doc, fh, indent=2, default=list)
        metrics_fh = open(metrics_path, "w", newline="")
        writer = csv.writer(metrics_fh)
        writer.writerow(["step", "loss", "solver_gap", "gap", "seconds"])
    optimizer = Adam(network.weights, config)
    start = time.monotonic()
    try:
        for step in range(1, config.total_steps + 1):
            games, targets, x = sample_batch(config, rng)
            lr = learning_rate_at(config, step)
            try:
                loss = train_step(network, optimizer, games, targets, x, lr)
            except (NonFiniteLoss, NonFiniteDetected) as exc:
                path = _dump_diagnostic(config, step, games, targets)
                where = f"; batch dumped to {path}" if path else ""
                raise NonFiniteLoss(f"step {step}: {exc}{where}") from exc
            if step % config.eval_every == 0 or step == config.total_steps:
                if eval_set is not None:
                    sgap, gap = eval_during_training(network, eval_set, config.concept)
                else:
                    sgap, gap = float("nan"), float("nan")
                seconds = time.monotonic() - start
                record = {
                    "step": step,
                    "loss": loss,
                    "solver_gap": sgap,
                    "gap": gap,
                    "seconds": seconds,
                }
                log.append(record)
                if writer is not None:
                    writer.writerow([step, loss, sgap, gap, seconds])
                    metrics_fh.flush()
                    network.save(_checkpoint_paths(config)[2])
                if progress:
                    print(
                        f"step {step} loss {loss:.6f} solver_gap {sgap:.4f} "
                        f"gap {gap:.4f} ({seconds:.1f}s)",
                        flush=True,
                    )
    finally:
        if writer is not None:
            metrics_fh.close()
    return network, log
