"""Permutation-equivariant network from payoff tensors to dual variables.

The architecture is three stages: payoff-shaped equivariant layers, a
payoff-to-dual transform, and dual-shaped equivariant layers, ending in a
softplus so predicted duals are nonnegative.  Every linear map acts on the
channel axis only, so the parameter count does not depend on how many
strategies the players have.  Equivariance comes from building each layer as a
channel-linear map over a concatenation of pooled-and-broadcast branches.

Activations are laid out as [batch, channel, player, |A_1|, ..., |A_N|] for
payoff stages; duals are per-player tensors [batch, channel, |A_p|] (CCE) or
[batch, channel, |A_p|, |A_p|] (CE).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState
from .dual import DualVariables
from .errors import NonCubicStackRequested, ShapeMismatch
from .games import NormalFormGame, norm_scale
from .targets import SelectionTargets

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture knobs; the defaults mirror the reference experiments."""

    concept: str = "CCE"
    payoff_layer_channels: tuple[int, ...] = (32, 32, 32, 32, 32)
    payoff_to_dual_channels: int = 64
    dual_layer_channels: tuple[int, ...] = (32, 32)
    outer_op: str = "sum"  # how the CE row/column branches combine
    cubic_weight_sharing: bool = True
    norm_order: float = 2.0

    def __post_init__(self):
        if self.concept not in ("CCE", "CE"):
            raise ValueError(f"concept must be CCE or CE, got {self.concept!r}")
        if self.outer_op not in ("sum", "product"):
            raise ValueError(f"outer_op must be sum or product, got {self.outer_op!r}")
        channels = (
            list(self.payoff_layer_channels)
            + [self.payoff_to_dual_channels]
            + list(self.dual_layer_channels)
        )
        if any(c < 1 for c in channels):
            raise ValueError("all channel counts must be >= 1")

    def to_dict(self) -> dict:
        return {
            "concept": self.concept,
            "payoff_layer_channels": list(self.payoff_layer_channels),
            "payoff_to_dual_channels": self.payoff_to_dual_channels,
            "dual_layer_channels": list(self.dual_layer_channels),
            "outer_op": self.outer_op,
            "cubic_weight_sharing": self.cubic_weight_sharing,
            "norm_order": self.norm_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(
            concept=d["concept"],
            payoff_layer_channels=tuple(d["payoff_layer_channels"]),
            payoff_to_dual_channels=int(d["payoff_to_dual_channels"]),
            dual_layer_channels=tuple(d["dual_layer_channels"]),
            outer_op=d["outer_op"],
            cubic_weight_sharing=bool(d["cubic_weight_sharing"]),
            norm_order=float(d["norm_order"]),
        )


def _centered_norm(payoffs: np.ndarray, order: float) -> np.ndarray:
    """Norm of each player's mean-centered payoff tensor, batched [B, N]."""
    flat = payoffs.reshape(payoffs.shape[0], payoffs.shape[1], -1)
    centered = flat - flat.mean(axis=2, keepdims=True)
    if order == 1:
        return np.abs(centered).sum(axis=2)
    if order == 2:
        return np.sqrt((centered**2).sum(axis=2))
    if np.isinf(order):
        return np.abs(centered).max(axis=2)
    raise ValueError(f"norm order must be 1, 2 or inf, got {order!r}")


def assemble_batch(
    payoffs: np.ndarray,
    sigma_hat: np.ndarray | None = None,
    epsilon_hat: np.ndarray | None = None,
    welfare: np.ndarray | None = None,
    norm_order: float = 2.0,
) -> np.ndarray:
    """Stack the four network input channels: [B, 4, N, |A_1|, ..., |A_N|].

    Channel 0 holds the (standardized) payoff stack.  Channel 1 is the target
    joint, centered and rescaled to unit element variance.  Channel 2 carries
    each player's target slack, normalized by that player's payoff scale and
    clipped.  Channel 3 is the welfare tensor.  Absent inputs become zeros,
    which is exactly what a pure entropy objective implies for them.
    """
    payoffs = np.asarray(payoffs, dtype=np.float64)
    if payoffs.ndim < 3:
        raise ShapeMismatch("payoffs must be [batch, player, strategies...]")
    batch, num_players = payoffs.shape[:2]
    strategies = payoffs.shape[2:]
    if len(strategies) != num_players:
        raise ShapeMismatch(
            f"{num_players} players but {len(strategies)} strategy axes"
        )
    joint = int(np.prod(strategies))
    out = np.zeros((batch, 4) + payoffs.shape[1:])
    out[:, 0] = payoffs
    if sigma_hat is not None:
        sigma_hat = np.asarray(sigma_hat, dtype=np.float64)
        if sigma_hat.shape != (batch,) + strategies:
            raise ShapeMismatch("sigma_hat must be [batch, strategies...]")
        z_s = joint * np.sqrt((joint + 1.0) / (joint - 1.0))
        centered = z_s * (sigma_hat - 1.0 / joint)
        out[:, 1] = centered[:, None]
    if epsilon_hat is not None:
        epsilon_hat = np.asarray(epsilon_hat, dtype=np.float64)
        if epsilon_hat.shape != (batch, num_players):
            raise ShapeMismatch("epsilon_hat must be [batch, player]")
        z = norm_scale(norm_order, joint)
        denom = _centered_norm(payoffs, norm_order)
        scaled = np.divide(
            epsilon_hat, denom, out=np.zeros_like(epsilon_hat), where=denom > 0
        )
        scaled = np.clip(scaled, -z, z)
        out[:, 2] = scaled.reshape((batch, num_players) + (1,) * num_players)
    if welfare is not None:
        welfare = np.asarray(welfare, dtype=np.float64)
        if welfare.shape != (batch,) + strategies:
            raise ShapeMismatch("welfare must be [batch, strategies...]")
        out[:, 3] = welfare[:, None]
    return out


def assemble_input(
    game: NormalFormGame, targets: SelectionTargets, norm_order: float = 2.0
) -> np.ndarray:
    """Single-game convenience wrapper around assemble_batch (batch of one)."""
    return assemble_batch(
        np.stack(game.payoffs)[None],
        targets.sigma_hat[None],
        targets.epsilon_hat[None],
        targets.welfare[None],
        norm_order,
    )


def _bcast(t, reduced_axes, full_shape):
    """Undo a reduction: reinsert the collapsed axes as 1s, then broadcast."""
    shape = list(full_shape)
    for a in reduced_axes:
        shape[a] = 1
    return ad.broadcast_to(ad.reshape(t, tuple(shape)), tuple(full_shape))


_POOLS = (ad.reduce_mean, ad.reduce_max)


class EquilibriumNetwork:
    """Equivariant dual predictor with explicit parameter storage.

    Weights live in a flat name -> array dict; every forward pass records them
    on a fresh tape so the training loop can read gradients off the returned
    parameter handles.  Batchnorm running statistics are owned by the network
    and mutated only by training-mode forwards.
    """

    def __init__(self, config: NetworkConfig | None = None, rng=None):
        self.config = config or NetworkConfig()
        rng = rng or np.random.default_rng(0)
        self.weights: dict[str, np.ndarray] = {}
        self.bn_states: dict[str, BatchNormState] = {}
        self._build(rng)

    # ---- construction ----------------------------------------------------

    def _payoff_branch_count(self) -> int:
        # identity + {all-strategy, player-and-strategy, player, own-axis,
        # other-axes} pools, each with mean and max
        return 1 + 2 * 5

    def _p2d_branch_count(self) -> int:
        # own-slice and player-pooled stacks, each pooled over the other
        # players' strategy axes with mean and max
        return 4

    def _dual_branch_count(self) -> int:
        shared = self.config.cubic_weight_sharing
        if self.config.concept == "CCE":
            return 3 + (4 if shared else 0)
        return 12 + (2 if shared else 0)

    def _layer_specs(self) -> list[tuple[str, int, int]]:
        """(name, fan_in, fan_out) for every channel-linear map, in order."""
        cfg = self.config
        specs = []
        c = 4
        for i, out in enumerate(cfg.payoff_layer_channels):
            specs.append((f"payoff{i}", self._payoff_branch_count() * c, out))
            c = out
        specs.append(("p2d", self._p2d_branch_count() * c, cfg.payoff_to_dual_channels))
        c = cfg.payoff_to_dual_channels
        for i, out in enumerate(cfg.dual_layer_channels):
            specs.append((f"dual{i}", self._dual_branch_count() * c, out))
            c = out
        specs.append(("out", self._dual_branch_count() * c, 1))
        return specs

    def _build(self, rng):
        for name, fan_in, fan_out in self._layer_specs():
            heads = ("_u", "_v") if name == "p2d" and self.config.concept == "CE" else ("",)
            for head in heads:
                self.weights[f"{name}{head}/w"] = rng.standard_normal(
                    (fan_in, fan_out)
                ) / np.sqrt(fan_in)
                self.weights[f"{name}{head}/b"] = np.zeros(fan_out)
            if name != "out":
                self.weights[f"{name}/bn_gamma"] = np.ones(fan_out)
                self.weights[f"{name}/bn_beta"] = np.zeros(fan_out)
                self.bn_states[name] = BatchNormState(fan_out)

    @property
    def num_parameters(self) -> int:
        return sum(w.size for w in self.weights.values())

    # ---- forward ---------------------------------------------------------

    def _check_stack(self, strategies: tuple[int, ...]):
        if self.config.cubic_weight_sharing and len(set(strategies)) > 1:
            raise NonCubicStackRequested(
                "cross-player weight sharing requires equal strategy counts, "
                f"got {strategies}"
            )

    def _payoff_branches(self, x, num_players):
        strat_axes = tuple(range(3, 3 + num_players))
        shape = x.shape
        tape = x.tape
        branches = [x]
        for pool in _POOLS:
            branches.append(_bcast(pool(x, strat_axes), strat_axes, shape))
            branches.append(_bcast(pool(x, (2,) + strat_axes), (2,) + strat_axes, shape))
            branches.append(_bcast(pool(x, (2,)), (2,), shape))
            # own-axis and other-axes pools select a different reduction per
            # player slice; assembled with one-hot player masks
            own = None
            others = None
            for q in range(num_players):
                hot = np.zeros((1, 1, num_players) + (1,) * num_players)
                hot[0, 0, q] = 1.0
                mask = tape.constant(hot)
                own_q = ad.mul(_bcast(pool(x, (3 + q,)), (3 + q,), shape), mask)
                rest = tuple(a for a in strat_axes if a != 3 + q)
                others_q = ad.mul(_bcast(pool(x, rest), rest, shape), mask)
                own = own_q if own is None else ad.add(own, own_q)
                others = others_q if others is None else ad.add(others, others_q)
            branches.append(own)
            branches.append(others)
        return branches

    def _linear(self, params, name, t):
        h = ad.channel_linear(t, params[f"{name}/w"], axis=1)
        b = ad.reshape(
            params[f"{name}/b"], (1, h.shape[1]) + (1,) * (t.ndim - 2)
        )
        return ad.add(h, ad.broadcast_to(b, h.shape))

    def _bn_relu(self, params, name, duals_or_tensor, training, capture):
        """Batchnorm (shared statistics) + relu; accepts a tensor or dual list."""
        gamma, beta = params[f"{name}/bn_gamma"], params[f"{name}/bn_beta"]
        state = self.bn_states[name]
        if not isinstance(duals_or_tensor, list):
            t = duals_or_tensor
            if capture is not None:
                capture[name] = t.data
            return ad.relu(ad.batch_norm(t, gamma, beta, 1, state, training))
        duals = duals_or_tensor
        # flatten each player's strategy axes and concatenate so one set of
        # per-channel statistics covers every player
        flats = [
            ad.reshape(d, (d.shape[0], d.shape[1], -1)) for d in duals
        ]
        joined = ad.concat(flats, axis=2) if len(flats) > 1 else flats[0]
        if capture is not None:
            capture[name] = joined.data
        normed = ad.relu(ad.batch_norm(joined, gamma, beta, 1, state, training))
        out = []
        offset = 0
        for d in duals:
            size = int(np.prod(d.shape[2:]))
            piece = ad.slice_axis(normed, 2, offset, offset + size)
            out.append(ad.reshape(piece, d.shape))
            offset += size
        return out

    def _p2d_head(self, params, head, x, num_players):
        duals = []
        for p in range(num_players):
            own = ad.index_axis(x, 2, p)  # [B, C, A_1, ..., A_N]
            own_rest = tuple(2 + i for i in range(num_players) if i != p)
            stack_rest = (2,) + tuple(3 + i for i in range(num_players) if i != p)
            branches = [
                ad.reduce_mean(own, own_rest),
                ad.reduce_max(own, own_rest),
                ad.reduce_mean(x, stack_rest),
                ad.reduce_max(x, stack_rest),
            ]
            duals.append(self._linear(params, head, ad.concat(branches, 1)))
        return duals

    def _cce_dual_branches(self, duals):
        shared = self.config.cubic_weight_sharing
        num_players = len(duals)
        # cross-player pooling must go through per-player strategy-invariant
        # summaries: each player's strategies can be relabeled independently,
        # so values aligned by raw strategy index cannot be mixed across players
        cross = []
        if shared:
            for pool in _POOLS:
                scal = ad.concat(
                    [
                        ad.reshape(pool(d, (2,)), (d.shape[0], d.shape[1], 1))
                        for d in duals
                    ],
                    axis=2,
                )  # [B, C, N]
                full = pool(scal, (2,))  # [B, C]
                others = []
                for i in range(num_players):
                    parts = []
                    if i > 0:
                        parts.append(ad.slice_axis(scal, 2, 0, i))
                    if i + 1 < num_players:
                        parts.append(ad.slice_axis(scal, 2, i + 1, num_players))
                    rest = parts[0] if len(parts) == 1 else ad.concat(parts, axis=2)
                    others.append(pool(rest, (2,)))  # [B, C]
                cross.append((full, others))
        out = []
        for i, d in enumerate(duals):
            branches = [d]
            for pool in _POOLS:
                branches.append(_bcast(pool(d, (2,)), (2,), d.shape))
            for full, others in cross:
                branches.append(_bcast(full, (2,), d.shape))
                branches.append(_bcast(others[i], (2,), d.shape))
            out.append(ad.concat(branches, 1))
        return out

    def _ce_dual_branches(self, duals):
        shared = self.config.cubic_weight_sharing
        pooled_players = []
        if shared:
            stacked = ad.concat(
                [
                    ad.reshape(d, (d.shape[0], d.shape[1], 1) + d.shape[2:])
                    for d in duals
                ],
                axis=2,
            )
            for pool in _POOLS:
                full = pool(stacked, (2, 3, 4))  # [B, C]
                pooled_players.append(full)
        out = []
        for d in duals:
            shape = d.shape
            branches = [d, ad.transpose(d, (0, 1, 3, 2))]
            for pool in _POOLS:
                rows = pool(d, (2,))  # function of the second strategy index
                cols = pool(d, (3,))  # function of the first strategy index
                branches.append(_bcast(rows, (2,), shape))
                branches.append(_bcast(rows, (3,), shape))
                branches.append(_bcast(cols, (3,), shape))
                branches.append(_bcast(cols, (2,), shape))
                branches.append(_bcast(pool(d, (2, 3)), (2, 3), shape))
            for full in pooled_players:
                branches.append(_bcast(full, (2, 3), shape))
            out.append(ad.concat(branches, 1))
        return out

    def _dual_branches(self, duals):
        if self.config.concept == "CCE":
            return self._cce_dual_branches(duals)
        return self._ce_dual_branches(duals)

    def _forward(self, x_np, training, capture=None):
        """Run the network on an assembled input batch.

        Returns (tape, per-player dual tensors with the channel axis dropped,
        parameter handles).
        """
        x_np = np.asarray(x_np, dtype=np.float64)
        num_players = x_np.shape[2]
        strategies = x_np.shape[3:]
        self._check_stack(strategies)
        tape = ad.Tape()
        params = {k: tape.parameter(v) for k, v in self.weights.items()}
        x = tape.constant(x_np)
        for i in range(len(self.config.payoff_layer_channels)):
            name = f"payoff{i}"
            h = self._linear(
                params, name, ad.concat(self._payoff_branches(x, num_players), 1)
            )
            x = self._bn_relu(params, name, h, training, capture)
        if self.config.concept == "CE":
            u = self._p2d_head(params, "p2d_u", x, num_players)
            v = self._p2d_head(params, "p2d_v", x, num_players)
            combine = ad.add if self.config.outer_op == "sum" else ad.mul
            duals = []
            for up, vp in zip(u, v):
                b, c, s = up.shape
                row = ad.reshape(up, (b, c, s, 1))
                col = ad.reshape(vp, (b, c, 1, s))
                duals.append(ad.diagonal_mask(combine(row, col), 2, 3))
        else:
            duals = self._p2d_head(params, "p2d", x, num_players)
        duals = self._bn_relu(params, "p2d", duals, training, capture)
        for i in range(len(self.config.dual_layer_channels)):
            name = f"dual{i}"
            branched = self._dual_branches(duals)
            duals = [self._linear(params, name, t) for t in branched]
            if self.config.concept == "CE":
                duals = [ad.diagonal_mask(d, 2, 3) for d in duals]
            duals = self._bn_relu(params, name, duals, training, capture)
        branched = self._dual_branches(duals)
        duals = [self._linear(params, "out", t) for t in branched]
        if capture is not None:
            capture["out"] = np.concatenate(
                [d.data.reshape(d.shape[0], -1) for d in duals], axis=1
            )
        duals = [ad.softplus(d) for d in duals]
        if self.config.concept == "CE":
            duals = [ad.diagonal_mask(d, 2, 3) for d in duals]
        duals = [ad.reshape(d, d.shape[:1] + d.shape[2:]) for d in duals]
        return tape, duals, params

    def predict_batch(self, x_np: np.ndarray) -> list[np.ndarray]:
        """Eval-mode duals for an assembled batch, one array per player."""
        _, duals, _ = self._forward(x_np, training=False)
        return [d.data for d in duals]

    def forward(self, game: NormalFormGame, targets: SelectionTargets) -> DualVariables:
        x = assemble_input(game, targets, self.config.norm_order)
        preds = self.predict_batch(x)
        return DualVariables(self.config.concept, tuple(p[0] for p in preds))

    # ---- initialization --------------------------------------------------

    def calibrate(self, x_np: np.ndarray) -> None:
        """Empirical variance-scaling initialization.

        Pushes the given dummy batch through the network one layer at a time
        and rescales each linear map so its pre-normalization activations have
        unit standard deviation.  Running statistics are reset afterwards so
        training starts from fresh ones.
        """
        order = [name for name, _, _ in self._layer_specs()]
        for target_name in order:
            capture: dict[str, np.ndarray] = {}
            self._forward(x_np, training=True, capture=capture)
            std = float(capture[target_name].std())
            if std <= 0:
                continue
            heads = (
                ("p2d_u", "p2d_v")
                if target_name == "p2d" and self.config.concept == "CE"
                else (target_name,)
            )
            for head in heads:
                self.weights[f"{head}/w"] /= std
                self.weights[f"{head}/b"] /= std
        for name, state in self.bn_states.items():
            fresh = BatchNormState(len(state.running_mean), state.momentum)
            state.running_mean = fresh.running_mean
            state.running_var = fresh.running_var

    # ---- checkpointing ---------------------------------------------------

    def to_checkpoint(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "weights": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in self.weights.items()
            },
            "batchnorm": {k: s.to_dict() for k, s in self.bn_states.items()},
        }

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "EquilibriumNetwork":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
        net = cls(NetworkConfig.from_dict(doc["config"]))
        for k, spec in doc["weights"].items():
            if k not in net.weights:
                raise ValueError(f"unexpected weight {k!r} in checkpoint")
            net.weights[k] = np.asarray(spec["data"], dtype=np.float64).reshape(
                spec["shape"]
            )
        net.bn_states = {
            k: BatchNormState.from_dict(v) for k, v in doc["batchnorm"].items()
        }
        return net

    def save(self, path: str) -> None:
        tmp = f"{path}.tmp"
        with open(tmp, "w") as fh:
            json.dump(self.to_checkpoint(), fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "EquilibriumNetwork":
        with open(path) as fh:
            return cls.from_checkpoint(json.load(fh))
