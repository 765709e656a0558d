"""Layers and sequential models.

Shapes exclude the batch axis everywhere in this module: a model declared with
``input_shape=(8, 8, 1)`` consumes tensors of shape ``(B, 8, 8, 1)``.
Convolutions use NHWC layout with kernels stored as ``(k, k, C_in, C_out)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SemcomError, ShapeError
from . import tensor as T
from .tensor import Tensor, check_finite

KINDS = ("dense", "conv2d", "flatten", "reshape", "relu", "sigmoid", "tanh", "power_norm")
ACTIVATIONS = frozenset({"relu", "sigmoid", "tanh"})


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Layer:
    kind: str
    params: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def output_shape(self, in_shape):
        kind, h = self.kind, self.hyper
        if kind == "dense":
            if len(in_shape) != 1 or in_shape[0] != h["in_dim"]:
                raise ShapeError(f"dense expects ({h['in_dim']},), got {in_shape}",
                                 expected=(h["in_dim"],), actual=in_shape)
            return (h["out_dim"],)
        if kind == "conv2d":
            if len(in_shape) != 3 or in_shape[2] != h["in_ch"]:
                raise ShapeError(f"conv2d expects (H, W, {h['in_ch']}), got {in_shape}",
                                 expected=("H", "W", h["in_ch"]), actual=in_shape)
            k, s, p = h["kernel"], h["stride"], h["padding"]
            ho = (in_shape[0] + 2 * p - k) // s + 1
            wo = (in_shape[1] + 2 * p - k) // s + 1
            if ho < 1 or wo < 1:
                raise ShapeError(f"conv2d kernel {k} too large for {in_shape}", actual=in_shape)
            return (ho, wo, h["out_ch"])
        if kind == "flatten":
            return (int(np.prod(in_shape)),)
        if kind == "reshape":
            target = tuple(h["shape"])
            if int(np.prod(target)) != int(np.prod(in_shape)):
                raise ShapeError(f"cannot reshape {in_shape} to {target}", expected=target, actual=in_shape)
            return target
        return tuple(in_shape)

    def __call__(self, x):
        kind, p, h = self.kind, self.params, self.hyper
        if kind == "dense":
            return T.add(T.matmul(x, p["weight"]), p["bias"])
        if kind == "conv2d":
            return T.conv2d(x, p["weight"], p["bias"], h["stride"], h["padding"])
        if kind == "flatten":
            return T.reshape(x, (x.shape[0], -1))
        if kind == "reshape":
            return T.reshape(x, (x.shape[0],) + tuple(h["shape"]))
        if kind == "relu":
            return T.relu(x)
        if kind == "sigmoid":
            return T.sigmoid(x)
        if kind == "tanh":
            return T.tanh(x)
        return T.power_norm(x)


def dense(in_dim, out_dim, rng, weight=None, bias=None):
    w = glorot_uniform(rng, (in_dim, out_dim), in_dim, out_dim) if weight is None else weight
    b = np.zeros(out_dim) if bias is None else bias
    return Layer("dense", {"weight": Tensor(w, requires_grad=True), "bias": Tensor(b, requires_grad=True)},
                 {"in_dim": in_dim, "out_dim": out_dim})


def conv2d(in_ch, out_ch, kernel, rng, stride=1, padding=0):
    fan_in, fan_out = kernel * kernel * in_ch, kernel * kernel * out_ch
    w = glorot_uniform(rng, (kernel, kernel, in_ch, out_ch), fan_in, fan_out)
    return Layer("conv2d",
                 {"weight": Tensor(w, requires_grad=True), "bias": Tensor(np.zeros(out_ch), requires_grad=True)},
                 {"in_ch": in_ch, "out_ch": out_ch, "kernel": kernel, "stride": stride, "padding": padding})


def flatten():
    return Layer("flatten")


def reshape(shape):
    return Layer("reshape", hyper={"shape": tuple(int(s) for s in shape)})


def activation(kind):
    if kind not in ACTIVATIONS:
        raise ValueError(f"{kind!r} is not an activation")
    return Layer(kind)


def power_norm():
    return Layer("power_norm")


def conv_kernel_size(n_x, cr):
    """Kernel width ``ceil(n_x / 5 * (1 - sqrt(cr)))``, at least 1.

    ``n_x`` stands in for the log-alphabet size of the channel input, which
    is proportional to the channel symbol count.
    """
    return max(1, math.ceil(n_x / 5.0 * (1.0 - math.sqrt(cr))))


class Model:
    """Ordered layer list applied to batched tensors."""

    def __init__(self, layers, input_shape, name="model"):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.name = name
        self.frozen = False
        self._last_input = None
        self._last_output = None
        self.output_shape = self._infer_shapes()

    def _infer_shapes(self):
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}", layer_index=i,
                                 expected=exc.expected, actual=exc.actual) from None
        return shape

    def parameters(self):
        out = []
        for layer in self.layers:
            for key in sorted(layer.params):
                out.append(layer.params[key])
        return out

    def num_params(self):
        return sum(p.size for p in self.parameters())

    def freeze(self):
        self.frozen = True
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def has_activations(self):
        return any(layer.kind in ACTIVATIONS for layer in self.layers)

    def forward(self, x, requires_input_grad=False):
        """Apply every layer to ``x`` (a Tensor or array of shape (B, *input_shape))."""
        if not isinstance(x, Tensor):
            x = Tensor(x, requires_grad=requires_input_grad)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(
                f"{self.name}: layer 0 expects input (B, {', '.join(map(str, self.input_shape))}), got {x.shape}",
                layer_index=0, expected=self.input_shape, actual=x.shape[1:])
        check_finite(x.data, f"{self.name} input")
        out = x
        for layer in self.layers:
            out = layer(out)
        self._last_input = x
        self._last_output = out
        return out

    __call__ = forward

    def backward(self, loss_grad):
        """Push ``loss_grad`` (shape of the last output) into parameter and input grads."""
        if self._last_output is None:
            raise SemcomError(f"{self.name}: backward called before forward")
        out = self._last_output
        if not out.requires_grad:
            return {}
        out.backward(loss_grad)
        return {id(p): p.grad for p in self.parameters()}

    def copy(self):
        """Deep copy of structure and parameter values (graph state is not copied)."""
        layers = []
        for layer in self.layers:
            params = {k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in layer.params.items()}
            layers.append(Layer(layer.kind, params, dict(layer.hyper)))
        m = Model(layers, self.input_shape, self.name)
        m.frozen = self.frozen
        return m

    def get_flat(self):
        return np.concatenate([p.data.ravel() for p in self.parameters()]) if self.parameters() else np.zeros(0)

    def set_flat(self, vec):
        i = 0
        for p in self.parameters():
            n = p.size
            p.data = np.asarray(vec[i:i + n], dtype=np.float64).reshape(p.shape).copy()
            i += n


def sequential(specs, input_shape, rng, name="model"):
    """Build a model from short specs like ``["flatten", ("dense", 16), "relu", ("dense", 2)]``.

    ``("conv2d", out_ch, kernel[, stride, padding])`` and ``("reshape", shape)``
    are also accepted.
    """
    layers = []
    shape = tuple(input_shape)
    for spec in specs:
        if isinstance(spec, str):
            spec = (spec,)
        kind = spec[0]
        if kind == "dense":
            layer = dense(shape[0], spec[1], rng)
        elif kind == "conv2d":
            stride = spec[3] if len(spec) > 3 else 1
            padding = spec[4] if len(spec) > 4 else 0
            layer = conv2d(shape[2], spec[1], spec[2], rng, stride, padding)
        elif kind == "flatten":
            layer = flatten()
        elif kind == "reshape":
            layer = reshape(spec[1])
        elif kind == "power_norm":
            layer = power_norm()
        else:
            layer = activation(kind)
        shape = layer.output_shape(shape)
        layers.append(layer)
    return Model(layers, input_shape, name)
