"""A small double-precision neural network engine.

Layers are plain objects holding numpy parameter arrays; a :class:`Network`
is a fixed stack of them with a hand-written reverse pass. Tensors are numpy
``float64`` arrays; a network whose first layer is a convolution takes
``(batch, channels, length)`` input, dense stacks take ``(batch, features)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

CHECKPOINT_FORMAT = "stopdeck-network"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class CacheError(ValueError):
    pass


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return expit(z)
    return z


def _activation_grad(kind, y, dy):
    # derivatives expressed through the layer output y
    if kind == "relu":
        return np.where(y > 0, dy, 0.0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    return dy


ACTIVATIONS = ("relu", "sigmoid", "identity")


def xavier_uniform(shape, fan_in, fan_out, rng):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Conv1d:
    """Valid (unpadded), stride-1 one-dimensional convolution.

    Activations are held channels-last, ``(batch, length, channels)``; the
    :class:`Network` converts its ``(batch, channels, length)`` input once.
    ``weight`` keeps the conventional ``(out, in, kernel)`` layout.
    """

    kind = "conv1d"

    def __init__(self, in_channels, out_channels, kernel, activation="relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels, self.out_channels, self.kernel = int(in_channels), int(out_channels), int(kernel)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = xavier_uniform((out_channels, in_channels, kernel), in_channels * kernel, out_channels * kernel, rng)
        self.bias = np.zeros(out_channels)

    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"type": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels,
                "kernel": self.kernel, "activation": self.activation}

    def output_shape(self, shape):
        c, length = shape
        if c != self.in_channels:
            raise ShapeError(f"expected {self.in_channels} input channels, got {c}")
        if length < self.kernel:
            raise ShapeError(f"input length {length} shorter than kernel {self.kernel}")
        return (self.out_channels, length - self.kernel + 1)

    def _wmat(self):
        # (out, kernel * in) matching im2col columns ordered (tap, channel)
        return self.weight.transpose(0, 2, 1).reshape(self.out_channels, -1)

    def forward(self, x):
        b, length, c = x.shape
        lout = length - self.kernel + 1
        cols = sliding_window_view(x, self.kernel, axis=1)  # (b, lout, c, k)
        cols = cols.transpose(0, 1, 3, 2).reshape(b * lout, self.kernel * c)
        z = cols @ self._wmat().T
        z += self.bias
        y = _activate(self.activation, z).reshape(b, lout, self.out_channels)
        return y, (cols, y, x.shape)

    def backward(self, cache, dy, need_input_grad=True):
        cols, y, xshape = cache
        b, length, c = xshape
        lout = length - self.kernel + 1
        dz = _activation_grad(self.activation, y, dy).reshape(b * lout, self.out_channels)
        dw = (dz.T @ cols).reshape(self.out_channels, self.kernel, c).transpose(0, 2, 1)
        db = dz.sum(axis=0)
        dx = None
        if need_input_grad:
            dcols = (dz @ self._wmat()).reshape(b, lout, self.kernel, c)
            dx = np.zeros(xshape)
            for j in range(self.kernel):
                dx[:, j : j + lout, :] += dcols[:, :, j, :]
        return dx, [np.ascontiguousarray(dw), db]


class Dense:
    kind = "dense"

    def __init__(self, in_features, out_features, activation="relu", rng=None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_features, self.out_features = int(in_features), int(out_features)
        self.activation = activation
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = xavier_uniform((out_features, in_features), in_features, out_features, rng)
        self.bias = np.zeros(out_features)

    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"type": self.kind, "in_features": self.in_features, "out_features": self.out_features,
                "activation": self.activation}

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ShapeError(f"expected input shape ({self.in_features},), got {shape}")
        return (self.out_features,)

    def forward(self, x):
        y = _activate(self.activation, x @ self.weight.T + self.bias)
        return y, (x, y)

    def backward(self, cache, dy, need_input_grad=True):
        x, y = cache
        dz = _activation_grad(self.activation, y, dy)
        dx = dz @ self.weight if need_input_grad else None
        return dx, [dz.T @ x, dz.sum(axis=0)]


class Flatten:
    kind = "flatten"

    def params(self):
        return []

    def config(self):
        return {"type": self.kind}

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy, need_input_grad=True):
        return dy.reshape(cache), []


_LAYER_TYPES = {"conv1d": Conv1d, "dense": Dense, "flatten": Flatten}


@dataclass
class ForwardCache:
    network_id: int
    generation: int
    input_shape: tuple
    output_shape: tuple
    layers: list


class Network:
    """A fixed stack of layers mapping ``input_shape`` (without batch) to an output."""

    def __init__(self, layers, input_shape):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.generation = 0
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = shape
        self._channels_last = bool(self.layers) and isinstance(self.layers[0], Conv1d)

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def n_params(self):
        return sum(p.size for p in self.params())

    def touch(self):
        """Mark parameters as changed so older forward caches are rejected."""
        self.generation += 1

    def forward(self, x):
        """Run the stack and keep what :meth:`backward` needs."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind}): expected input shape "
                             f"(batch, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        if self._channels_last:
            x = x.transpose(0, 2, 1)
        caches = []
        for layer in self.layers:
            x, c = layer.forward(x)
            caches.append(c)
        if self._channels_last and x.ndim == 3:
            x = x.transpose(0, 2, 1)
        return x, ForwardCache(id(self), self.generation, x.shape[:1] + self.input_shape, x.shape, caches)

    def predict(self, x):
        return self.forward(x)[0]

    __call__ = predict

    def backward(self, cache: ForwardCache, upstream, return_input_grad=False):
        """Gradients of a scalar loss with respect to every parameter.

        ``upstream`` is dLoss/dOutput for the forward call that produced
        ``cache``. The returned list is aligned with :meth:`params`.
        """
        if cache.network_id != id(self) or cache.generation != self.generation:
            raise CacheError("forward cache does not belong to the current network parameters")
        dy = np.asarray(upstream, dtype=np.float64)
        if dy.shape != cache.output_shape:
            raise ShapeError(f"upstream gradient shape {dy.shape} != output shape {cache.output_shape}")
        if self._channels_last and dy.ndim == 3:
            dy = dy.transpose(0, 2, 1)
        grads = []
        last = len(self.layers) - 1
        for i, (layer, c) in enumerate(zip(reversed(self.layers), reversed(cache.layers))):
            dy, g = layer.backward(c, dy, need_input_grad=return_input_grad or i < last)
            grads = g + grads
        if not return_input_grad:
            return grads
        if self._channels_last:
            dy = dy.transpose(0, 2, 1)
        return grads, dy

    def config(self):
        return {"input_shape": list(self.input_shape), "layers": [l.config() for l in self.layers]}

    @classmethod
    def from_config(cls, config):
        layers = []
        for spec in config["layers"]:
            spec = dict(spec)
            kind = spec.pop("type")
            layers.append(_LAYER_TYPES[kind](**spec))
        return cls(layers, config["input_shape"])


def build_network(layer_specs, input_shape, seed=0):
    """Construct a network with Xavier-uniform weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for spec in layer_specs:
        spec = dict(spec)
        kind = spec.pop("type")
        if kind == "flatten":
            layers.append(Flatten())
        else:
            layers.append(_LAYER_TYPES[kind](rng=rng, **spec))
    return Network(layers, input_shape)


# ---------------------------------------------------------------- optimizers


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        for name in ("beta1", "beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1), got {getattr(self, name)!r}")


@dataclass
class MomentumState:
    """Classical momentum SGD: ``dw(n) = momentum * dw(n-1) - lr * grad``."""

    learning_rate: float = 1e-3
    momentum: float = 0.9
    step: int = 0
    velocity: list = field(default_factory=list)

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate!r}")
        if not 0 <= self.momentum < 1:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum!r}")


def _check_pairs(params, grads):
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs gradient {g.shape}")


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    _check_pairs(params, grads)
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return params, state


def momentum_step(params, grads, state: MomentumState):
    _check_pairs(params, grads)
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    state.step += 1
    for p, g, dw in zip(params, grads, state.velocity):
        dw *= state.momentum
        dw -= state.learning_rate * g
        p += dw
    return params, state


def optimizer_step(net: Network, grads, state):
    if isinstance(state, AdamState):
        adam_step(net.params(), grads, state)
    else:
        momentum_step(net.params(), grads, state)
    net.touch()


# ---------------------------------------------------------- gradient checking


def check_gradients(loss_of_params, params, analytic, eps=1e-5, floor=1e-6, max_checks=None, rng=None):
    """Largest relative gap between ``analytic`` gradients and central differences.

    ``loss_of_params()`` must re-evaluate the scalar loss from the current
    contents of ``params``, which are perturbed in place and restored. The
    relative error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``floor`` keeps coordinates whose true gradient is zero from dividing
    round-off by round-off. With ``max_checks`` set, that many coordinates are
    sampled uniformly instead of checking all of them.
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps!r}")
    _check_pairs(params, analytic)
    index = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_checks is not None and max_checks < len(index):
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(index), size=max_checks, replace=False)
        index = [index[k] for k in sorted(pick)]
    worst = 0.0
    for i, j in index:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        up = loss_of_params()
        flat[j] = orig - eps
        down = loss_of_params()
        flat[j] = orig
        numeric = (up - down) / (2 * eps)
        a = analytic[i].reshape(-1)[j]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        worst = max(worst, err)
    return worst


def grad_check(net: Network, x, loss_fn, eps=1e-5, floor=1e-6, max_checks=None, rng=None):
    """Compare :meth:`Network.backward` against central differences.

    ``loss_fn(output)`` returns ``(loss, dloss_doutput)``.
    """
    out, cache = net.forward(x)
    _, upstream = loss_fn(out)
    analytic = net.backward(cache, upstream)

    def loss_of_params():
        return loss_fn(net.predict(x))[0]

    return check_gradients(loss_of_params, net.params(), analytic, eps=eps, floor=floor,
                           max_checks=max_checks, rng=rng)


def relu_margin(net: Network, x) -> float:
    """Smallest ``|pre-activation|`` over all ReLU units for input ``x``.

    Central differences with step ``eps`` are only meaningful when no unit
    sits within roughly ``eps`` of its kink.
    """
    h = np.asarray(x, dtype=np.float64)
    if net._channels_last:
        h = h.transpose(0, 2, 1)
    margin = math.inf
    for layer in net.layers:
        act = getattr(layer, "activation", None)
        if act == "relu":
            layer.activation = "identity"
            try:
                z, _ = layer.forward(h)
            finally:
                layer.activation = act
            margin = min(margin, float(np.min(np.abs(z))))
            h = np.maximum(z, 0.0)
        else:
            h, _ = layer.forward(h)
    return margin


# ------------------------------------------------------------- checkpoints


def _encode_array(a):
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _decode_array(d):
    return np.asarray(d["data"], dtype=np.float64).reshape(d["shape"])


def optimizer_to_dict(state):
    if state is None:
        return None
    if isinstance(state, AdamState):
        return {"kind": "adam", "learning_rate": state.learning_rate, "beta1": state.beta1,
                "beta2": state.beta2, "epsilon": state.epsilon, "step": state.step,
                "m": [_encode_array(a) for a in state.m], "v": [_encode_array(a) for a in state.v]}
    return {"kind": "momentum", "learning_rate": state.learning_rate, "momentum": state.momentum,
            "step": state.step, "velocity": [_encode_array(a) for a in state.velocity]}


def optimizer_from_dict(d):
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind")
    if kind == "adam":
        m = [_decode_array(a) for a in d.pop("m")]
        v = [_decode_array(a) for a in d.pop("v")]
        return AdamState(m=m, v=v, **d)
    vel = [_decode_array(a) for a in d.pop("velocity")]
    return MomentumState(velocity=vel, **d)


def network_to_dict(net: Network, optimizer=None, config_hash="", extra=None):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": config_hash,
        "network": net.config(),
        "parameters": [_encode_array(p) for p in net.params()],
        "optimizer": optimizer_to_dict(optimizer),
    }
    if extra:
        doc.update(extra)
    return doc


def network_from_dict(doc):
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a {CHECKPOINT_FORMAT} checkpoint (format={doc.get('format')!r})")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    net = Network.from_config(doc["network"])
    stored = [_decode_array(a) for a in doc["parameters"]]
    _check_pairs(net.params(), stored)
    for p, s in zip(net.params(), stored):
        p[...] = s
    return net, optimizer_from_dict(doc.get("optimizer"))


def save_network(path, net, optimizer=None, config_hash="", extra=None):
    doc = network_to_dict(net, optimizer, config_hash, extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_network(path):
    with open(path, encoding="utf-8") as fh:
        return network_from_dict(json.load(fh))
