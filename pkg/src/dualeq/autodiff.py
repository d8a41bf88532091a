"""Minimal dense tensor engine with reverse-mode automatic differentiation.

Exactly the operations the equivariant network and its training loss need,
nothing more.  Tensors wrap float64 numpy arrays and are immutable after
construction.  A Tape records every derived tensor in creation order, which is
already a topological order, so the backward pass is a single reverse sweep.
Every forward result is checked for NaN/inf and raises NonFiniteDetected
instead of letting the poison propagate.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteDetected, ShapeMismatch

_BN_EPS = 1e-5


class Tensor:
    """Immutable node in a computation graph.

    parents holds (parent tensor, vector-Jacobian product) pairs; leaf tensors
    have none.  Gradients land in .grad after Tape.backward for tensors created
    with Tape.parameter.
    """

    __slots__ = ("data", "tape", "parents", "is_parameter", "grad")

    def __init__(self, data, tape, parents=(), is_parameter=False):
        self.data = data
        self.tape = tape
        self.parents = parents
        self.is_parameter = is_parameter
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        kind = "param" if self.is_parameter else "tensor"
        return f"Tensor({kind}, shape={self.data.shape})"


class Tape:
    """Single-owner recording of a forward pass; not shared across threads."""

    def __init__(self):
        self._nodes: list[Tensor] = []

    def _make(self, data, parents=(), is_parameter=False) -> Tensor:
        data = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteDetected("non-finite values produced during forward pass")
        t = Tensor(data, self, parents, is_parameter)
        self._nodes.append(t)
        return t

    def parameter(self, data) -> Tensor:
        """Leaf tensor whose gradient is wanted."""
        return self._make(data, is_parameter=True)

    def constant(self, data) -> Tensor:
        """Leaf tensor treated as fixed (gradient is not tracked through it)."""
        return self._make(data)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d loss / d parameter into .grad for every parameter.

        The loss must be scalar.  Nodes are visited exactly once, in reverse
        creation order.
        """
        if loss.tape is not self:
            raise ShapeMismatch("loss tensor was recorded on a different tape")
        if loss.data.size != 1:
            raise ShapeMismatch(f"loss must be scalar, got shape {loss.data.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_parameter:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node.parents:
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _same_tape(*tensors) -> Tape:
    tape = tensors[0].tape
    for t in tensors[1:]:
        if t.tape is not tape:
            raise ShapeMismatch("operands were recorded on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    out = a.data + b.data
    return tape._make(out, (
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    tape = _same_tape(a, b)
    out = a.data * b.data
    return tape._make(out, (
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.tape._make(a.data * c, ((a, lambda g: g * c),))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def channel_linear(x: Tensor, w: Tensor, axis: int) -> Tensor:
    """Contract the designated channel axis of x against w [in_ch, out_ch].

    The output keeps the channel axis in the same position with the new width.
    """
    tape = _same_tape(x, w)
    if w.ndim != 2 or x.data.shape[axis] != w.data.shape[0]:
        raise ShapeMismatch(
            f"channel_linear: x channel {x.data.shape[axis]} vs w {w.data.shape}"
        )
    axis = axis % x.ndim
    out = np.moveaxis(np.tensordot(x.data, w.data, axes=([axis], [0])), -1, axis)

    def vjp_x(g):
        return np.moveaxis(
            np.tensordot(g, w.data, axes=([axis], [1])), -1, axis
        )

    def vjp_w(g):
        other = tuple(i for i in range(x.ndim) if i != axis)
        return np.tensordot(x.data, g, axes=(other, other))

    return tape._make(out, ((x, vjp_x), (w, vjp_w)))


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    tape = _same_tape(*tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
        index = [slice(None)] * out.ndim
        index[axis] = slice(int(lo), int(hi))
        parents.append((t, lambda g, idx=tuple(index): g[idx]))
    return tape._make(out, tuple(parents))


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = np.broadcast_to(x.data, shape).copy()
    return x.tape._make(out, ((x, lambda g: _unbroadcast(g, x.data.shape)),))


def _normalize_axes(axes, ndim) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(a % ndim for a in axes))


def reduce_sum(x: Tensor, axes) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    out = x.data.sum(axis=axes)

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axes), x.data.shape)

    return x.tape._make(out, ((x, vjp),))


def reduce_mean(x: Tensor, axes) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    count = int(np.prod([x.data.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axes), x.data.shape) / count

    return x.tape._make(out, ((x, vjp),))


def _group_view(data: np.ndarray, axes: tuple[int, ...]):
    """Move the reduced axes last and flatten them into one trailing axis."""
    kept = tuple(i for i in range(data.ndim) if i not in axes)
    moved = np.transpose(data, kept + axes)
    kept_shape = moved.shape[: len(kept)]
    return moved.reshape(kept_shape + (-1,)), kept, kept_shape


def reduce_max(x: Tensor, axes) -> Tensor:
    """Max over an axis subset; ties route the gradient to the first flat index."""
    axes = _normalize_axes(axes, x.ndim)
    flat, kept, kept_shape = _group_view(x.data, axes)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, arg[..., None], g[..., None], axis=-1)
        gx = gx.reshape(kept_shape + tuple(x.data.shape[a] for a in axes))
        inverse = np.argsort(kept + axes)
        return np.transpose(gx, inverse)

    return x.tape._make(out, ((x, vjp),))


def logsumexp(x: Tensor, axes) -> Tensor:
    axes = _normalize_axes(axes, x.ndim)
    m = x.data.max(axis=axes, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axes, keepdims=True)
    out = np.squeeze(m + np.log(s), axis=axes)
    soft = e / s

    def vjp(g):
        return np.expand_dims(g, axes) * soft

    return x.tape._make(out, ((x, vjp),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return x.tape._make(np.where(keep, x.data, 0.0), ((x, lambda g: g * keep),))


def softplus(x: Tensor) -> Tensor:
    out = np.log1p(np.exp(-np.abs(x.data))) + np.maximum(x.data, 0.0)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    return x.tape._make(out, ((x, lambda g: g * sig),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return x.tape._make(
        x.data.reshape(shape), ((x, lambda g: g.reshape(x.data.shape)),)
    )


def index_axis(x: Tensor, axis: int, i: int) -> Tensor:
    """Select one slice along an axis, dropping that axis."""
    idx = [slice(None)] * x.ndim
    idx[axis] = i
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros_like(x.data)
        out[idx] = g
        return out

    return x.tape._make(x.data[idx], ((x, vjp),))


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Select a contiguous range along an axis, keeping the axis."""
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)

    def vjp(g):
        out = np.zeros_like(x.data)
        out[idx] = g
        return out

    return x.tape._make(x.data[idx], ((x, vjp),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    return x.tape._make(
        np.transpose(x.data, axes), ((x, lambda g: np.transpose(g, inverse)),)
    )


def diagonal_mask(x: Tensor, axis_a: int, axis_b: int) -> Tensor:
    """Zero the plane where the two indicated strategy axes agree."""
    n_a, n_b = x.data.shape[axis_a], x.data.shape[axis_b]
    if n_a != n_b:
        raise ShapeMismatch(f"diagonal axes disagree: {n_a} vs {n_b}")
    shape = [1] * x.ndim
    shape[axis_a] = n_a
    shape[axis_b] = n_b
    idx_a = np.arange(n_a).reshape([n_a if i == axis_a else 1 for i in range(x.ndim)])
    idx_b = np.arange(n_b).reshape([n_b if i == axis_b else 1 for i in range(x.ndim)])
    keep = (idx_a != idx_b).astype(np.float64)
    return x.tape._make(x.data * keep, ((x, lambda g: g * keep),))


class BatchNormState:
    """Running statistics for one batchnorm site; mutated by training steps."""

    def __init__(self, channels: int, momentum: float = 0.9):
        self.momentum = momentum
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def to_dict(self) -> dict:
        return {
            "momentum": self.momentum,
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BatchNormState":
        state = cls(len(d["running_mean"]), d["momentum"])
        state.running_mean = np.asarray(d["running_mean"], dtype=np.float64)
        state.running_var = np.asarray(d["running_var"], dtype=np.float64)
        return state


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    channel_axis: int,
    state: BatchNormState,
    training: bool,
) -> Tensor:
    """Per-channel normalization over every non-channel axis.

    Training mode normalizes by batch statistics and updates the running ones;
    eval mode is a deterministic affine map using the frozen statistics.
    """
    tape = _same_tape(x, gamma, beta)
    channel_axis = channel_axis % x.ndim
    channels = x.data.shape[channel_axis]
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise ShapeMismatch("gamma/beta must be one value per channel")
    axes = tuple(i for i in range(x.ndim) if i != channel_axis)
    bshape = [1] * x.ndim
    bshape[channel_axis] = channels

    def expand(v):
        return v.reshape(bshape)

    if training:
        count = x.data.size // channels
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean
        state.running_var = m * state.running_var + (1.0 - m) * var
        inv = 1.0 / np.sqrt(var + _BN_EPS)
        x_hat = (x.data - expand(mean)) * expand(inv)
        out = expand(gamma.data) * x_hat + expand(beta.data)

        def vjp_x(g):
            g_hat = g * expand(gamma.data)
            term = g_hat - expand(g_hat.mean(axis=axes)) - x_hat * expand(
                (g_hat * x_hat).sum(axis=axes) / count
            )
            return term * expand(inv)

        return tape._make(out, (
            (x, vjp_x),
            (gamma, lambda g: (g * x_hat).sum(axis=axes)),
            (beta, lambda g: g.sum(axis=axes)),
        ))

    inv = 1.0 / np.sqrt(state.running_var + _BN_EPS)
    x_hat = (x.data - expand(state.running_mean)) * expand(inv)
    out = expand(gamma.data) * x_hat + expand(beta.data)
    return tape._make(out, (
        (x, lambda g: g * expand(gamma.data * inv)),
        (gamma, lambda g: (g * x_hat).sum(axis=axes)),
        (beta, lambda g: g.sum(axis=axes)),
    ))
