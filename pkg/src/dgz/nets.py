"""Multilayer perceptrons, Adam, and the DGZW parameter checkpoint format.

Checkpoint layout (all little-endian)::

    b"DGZW"                      magic
    uint32 L                     number of affine layers
    L x (uint32 in, uint32 out)  layer dims
    per layer: float32[in*out] weight (row-major, in x out), float32[out] bias
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from dgz.errors import ContractError, FormatError, PoisonedGradientError, ShapeError
from dgz.tensor_core import Tensor, add, leaky_relu, matmul, relu

ACTIVATIONS = ("leaky_relu", "relu", "none")


@dataclass(frozen=True)
class MlpSpec:
    layer_dims: tuple
    hidden_activation: str = "leaky_relu"
    slope: float = 0.2
    output_activation: str = "none"

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ContractError("MlpSpec needs at least one layer (two dims)")
        if any(d <= 0 for d in dims):
            raise ContractError(f"MlpSpec dims must be positive, got {dims}")
        if self.hidden_activation not in ACTIVATIONS:
            raise ContractError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in ACTIVATIONS:
            raise ContractError(f"unknown output activation {self.output_activation!r}")

    @property
    def n_layers(self):
        return len(self.layer_dims) - 1


@dataclass
class Mlp:
    """Parameters are tracked leaf tensors; weights are stored ``in x out``."""

    spec: MlpSpec
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def parameters(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def arrays(self):
        return [p.value for p in self.parameters()]

    def load_arrays(self, arrays):
        arrays = list(arrays)
        if len(arrays) != 2 * self.spec.n_layers:
            raise ShapeError(f"expected {2 * self.spec.n_layers} arrays, got {len(arrays)}")
        for i in range(self.spec.n_layers):
            w, b = arrays[2 * i], arrays[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeError(f"layer {i}: parameter shape mismatch")
            self.weights[i] = Tensor(w, requires_grad=True)
            self.biases[i] = Tensor(b, requires_grad=True)

    def copy(self):
        net = Mlp(self.spec, list(self.weights), list(self.biases))
        net.load_arrays([a.copy() for a in self.arrays()])
        return net

    def astype(self, dtype):
        net = self.copy()
        net.load_arrays([a.astype(dtype) for a in self.arrays()])
        return net

    @property
    def d_in(self):
        return self.spec.layer_dims[0]

    @property
    def d_out(self):
        return self.spec.layer_dims[-1]


def init_mlp(spec, rng, dtype=np.float64):
    """He-style Gaussian weights (std ``sqrt(2/fan_in)``), zero biases."""
    weights, biases = [], []
    dims = spec.layer_dims
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        weights.append(Tensor(w.astype(dtype), requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out), dtype=dtype), requires_grad=True))
    return Mlp(spec, weights, biases)


def _activate(h, kind, slope):
    if kind == "leaky_relu":
        return leaky_relu(h, slope)
    if kind == "relu":
        return relu(h)
    return h


def mlp_forward(net, x, tape=None):
    """Apply ``net`` to the rows of ``x``.

    With a ``tape`` the computation is recorded there and a tensor is
    returned; without one the result is a plain array.  Inside an already
    active tape, pass ``x`` as a tensor and use :func:`mlp_apply` instead.
    """
    if tape is None:
        return mlp_apply(net, Tensor(np.asarray(x, dtype=net.weights[0].dtype))).value
    with tape:
        return mlp_apply(net, x)


def mlp_apply(net, x):
    """Forward pass on tensors, recorded on whatever tape is active."""
    if x.shape[-1] != net.d_in:
        raise ShapeError(f"mlp: input has {x.shape[-1]} columns, net expects {net.d_in}")
    h = x
    last = net.spec.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = add(matmul(h, w), b)
        kind = net.spec.output_activation if i == last else net.spec.hidden_activation
        h = _activate(h, kind, net.spec.slope)
    return h


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state):
    """One bias-corrected Adam update.

    ``params`` and ``grads`` are lists of arrays.  Returns the new parameter
    arrays; ``state`` is advanced in place.  Raises before touching the state
    if any gradient is non-finite.
    """
    if len(params) != len(grads):
        raise ShapeError("adam_step: params and grads differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise ShapeError(f"adam_step: grad {i} has shape {g.shape}, param {p.shape}")
        if not np.all(np.isfinite(g)):
            raise PoisonedGradientError(f"adam_step: non-finite gradient in parameter {i}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = b1 * state.m[i] + (1.0 - b1) * g
        v = b2 * state.v[i] + (1.0 - b2) * (g * g)
        state.m[i] = m
        state.v[i] = v
        out.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    return out


class Adam:
    """Adam bound to one network."""

    def __init__(self, net, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, grads):
        new = adam_step(self.net.arrays(), grads, self.state)
        self.net.load_arrays([a.astype(p.dtype, copy=False) for a, p in zip(new, self.net.arrays())])


# --- checkpoints -----------------------------------------------------------

_MAGIC = b"DGZW"


def save_mlp(net, path):
    dims = net.spec.layer_dims
    parts = [_MAGIC, struct.pack("<I", net.spec.n_layers)]
    for a, b in zip(dims[:-1], dims[1:]):
        parts.append(struct.pack("<II", a, b))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w.value, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b.value, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_mlp(path, hidden_activation="leaky_relu", slope=0.2, output_activation="none"):
    """Read a DGZW checkpoint; activations are not stored and must be given."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _MAGIC:
        raise FormatError("magic", f"expected {_MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 8:
        raise FormatError("layer_count", "truncated header")
    (n_layers,) = struct.unpack_from("<I", blob, 4)
    if n_layers == 0:
        raise FormatError("layer_count", "must be positive")
    off = 8
    if len(blob) < off + 8 * n_layers:
        raise FormatError("layer_dims", "truncated header")
    pairs = [struct.unpack_from("<II", blob, off + 8 * i) for i in range(n_layers)]
    off += 8 * n_layers
    for i in range(1, n_layers):
        if pairs[i][0] != pairs[i - 1][1]:
            raise FormatError("layer_dims", f"layer {i} input does not match layer {i - 1} output")
    dims = [pairs[0][0]] + [p[1] for p in pairs]
    expected = off + 4 * sum(a * b + b for a, b in pairs)
    if len(blob) != expected:
        raise FormatError("payload", f"expected {expected} bytes, got {len(blob)}")
    spec = MlpSpec(tuple(dims), hidden_activation, slope, output_activation)
    weights, biases = [], []
    for a, b in pairs:
        w = np.frombuffer(blob, dtype="<f4", count=a * b, offset=off).reshape(a, b)
        off += 4 * a * b
        bias = np.frombuffer(blob, dtype="<f4", count=b, offset=off).reshape(1, b)
        off += 4 * b
        weights.append(Tensor(w.astype(np.float64), requires_grad=True))
        biases.append(Tensor(bias.astype(np.float64), requires_grad=True))
    return Mlp(spec, weights, biases)
