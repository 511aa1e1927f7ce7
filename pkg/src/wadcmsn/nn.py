"""Dense network substrate: MLP forward/backward, RMSprop, weight clipping.

Batches are row-major ``(batch, features)`` arrays. A layer computes
``act(a @ W.T + b)`` with ``W`` of shape ``(out, in)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError, StaleTapeError, ValidationError

ACTIVATIONS = ("relu", "leaky_relu", "identity", "tanh")


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"
    slope: float = 0.2  # leaky_relu only

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError(
                f"layer weight {self.weight.shape} / bias {self.bias.shape} disagree"
            )

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]


def _activate(layer, z):
    if layer.activation == "identity":
        return z
    if layer.activation == "relu":
        return np.maximum(z, 0.0)
    if layer.activation == "leaky_relu":
        if 0 <= layer.slope <= 1:
            return np.maximum(z, layer.slope * z)
        return np.where(z > 0, z, layer.slope * z)
    return np.tanh(z)


def _activation_grad(layer, z, a, grad):
    if layer.activation == "identity":
        return grad
    if layer.activation == "relu":
        return grad * (z > 0)
    if layer.activation == "leaky_relu":
        return np.where(z > 0, grad, layer.slope * grad)
    return grad * (1.0 - a * a)


class Mlp:
    """A chain of dense layers.

    ``version`` is bumped by every in-place parameter update so that a
    :class:`Tape` recorded before the update is rejected by :func:`backward`.
    """

    def __init__(self, layers):
        if not layers:
            raise ValidationError("an Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}"
                )
        self.layers = list(layers)
        self.version = 0

    @classmethod
    def build(cls, dims, activations, rng=None, dtype=np.float64, slope=0.2):
        """Glorot-uniform weights, zero biases.

        ``dims`` lists every width including input and output;
        ``activations`` has one entry per layer.
        """
        if len(activations) != len(dims) - 1:
            raise ValidationError("need one activation per layer")
        rng = np.random.default_rng(rng)
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            a = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-a, a, size=(fan_out, fan_in)).astype(dtype)
            layers.append(Layer(w, np.zeros(fan_out, dtype=dtype), act, slope))
        return cls(layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self):
        """Parameter arrays in the canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self):
        net = Mlp([
            Layer(l.weight.copy(), l.bias.copy(), l.activation, l.slope)
            for l in self.layers
        ])
        return net

    def __call__(self, batch):
        return forward(self, batch)[0]

    def __repr__(self):
        dims = [self.input_dim] + [l.out_dim for l in self.layers]
        acts = ",".join(l.activation for l in self.layers)
        return f"Mlp(dims={dims}, activations=[{acts}])"


@dataclass
class Tape:
    net_id: int
    version: int
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activations
    post: list = field(default_factory=list)     # activations


def forward(net, batch, check_finite=True):
    """Run ``net`` on a ``(b, input_dim)`` batch; returns ``(output, tape)``.

    ``check_finite=False`` skips the input scan, for inputs that are
    themselves network outputs inside an already-checked computation.
    """
    dtype = net.layers[0].weight.dtype
    a = batch if isinstance(batch, np.ndarray) and batch.dtype == dtype \
        else np.asarray(batch, dtype=dtype)
    if a.ndim != 2 or a.shape[1] != net.layers[0].weight.shape[1]:
        raise ShapeError(f"expected (b, {net.input_dim}) batch, got {a.shape}")
    if check_finite and not np.isfinite(a).all():
        raise NumericError("non-finite entries in forward input")
    tape = Tape(id(net), net.version)
    inputs, pre, post = tape.inputs, tape.pre, tape.post
    for layer in net.layers:
        inputs.append(a)
        z = a @ layer.weight.T
        z += layer.bias
        a = _activate(layer, z)
        pre.append(z)
        post.append(a)
    return a, tape


def backward(net, tape, grad_output, need_params=True, need_input=True):
    """Backpropagate ``grad_output`` through the pass recorded in ``tape``.

    Returns ``(param_grads, grad_input)``, with ``param_grads`` aligned
    to ``net.params()``. Either part may be skipped (returned as None).
    """
    if tape.net_id != id(net) or tape.version != net.version:
        raise StaleTapeError("tape was not produced by the current state of this net")
    g = np.asarray(grad_output, dtype=net.dtype)
    if g.shape != tape.post[-1].shape:
        raise ShapeError(
            f"grad_output shape {g.shape} != forward output {tape.post[-1].shape}"
        )
    grads = [None] * (2 * len(net.layers))
    for k in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[k]
        g = _activation_grad(layer, tape.pre[k], tape.post[k], g)
        if need_params:
            grads[2 * k] = g.T @ tape.inputs[k]
            grads[2 * k + 1] = g.sum(axis=0)
        if k == 0 and not need_input:
            return (grads if need_params else None), None
        g = g @ layer.weight
    return (grads if need_params else None), g


@dataclass
class RmsPropState:
    accumulators: list
    learning_rate: float = 1e-4
    decay: float = 0.99
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kwargs):
        return cls([np.zeros_like(p) for p in params], **kwargs)


def rmsprop_step(params, grads, state):
    """In-place RMSprop update of ``params`` and ``state.accumulators``.

    acc <- decay*acc + (1-decay)*g**2 ; p <- p - lr*g/(sqrt(acc)+eps)
    """
    if not (len(params) == len(grads) == len(state.accumulators)):
        raise ShapeError("params, grads and accumulators differ in length")
    for p, g, acc in zip(params, grads, state.accumulators):
        if p.shape != g.shape or p.shape != acc.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {acc.shape}")
    rho = state.decay
    for p, g, acc in zip(params, grads, state.accumulators):
        tmp = np.multiply(g, g)
        tmp *= 1.0 - rho
        acc *= rho
        acc += tmp
        np.sqrt(acc, out=tmp)
        tmp += state.epsilon
        np.divide(g, tmp, out=tmp)
        tmp *= state.learning_rate
        p -= tmp
    return params, state


def rmsprop_update(net, grads, state):
    """:func:`rmsprop_step` on an Mlp's parameters; invalidates old tapes."""
    rmsprop_step(net.params(), grads, state)
    net.version += 1
    return net


def clip_weights(net, c):
    """Clamp every weight and bias entry of ``net`` into ``[-c, c]`` in place."""
    if not c > 0:
        raise ValidationError(f"clip constant must be positive, got {c}")
    for p in net.params():
        np.clip(p, -c, c, out=p)
    net.version += 1
    return net
