"""Dense feed-forward regression network over a flat parameter vector.

Hidden layers use ``tanh`` (or the logistic function), the output layer is
linear. The training objective is the plain sum of squared errors over a
batch, with exact reverse-mode gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PRESETS = {
    "14:11:9": (14, 11, 9),
    "14:13:12:9": (14, 13, 12, 9),
    "14:13:12:11:9": (14, 13, 12, 11, 9),
}

ACTIVATIONS = ("tanh", "logistic")


class ShapeError(ValueError):
    """Array shapes do not match the network."""


def parse_layers(text):
    """``"14:11:9"`` -> ``(14, 11, 9)``; preset names resolve the same way."""
    if isinstance(text, str):
        text = PRESETS.get(text, text)
        if isinstance(text, str):
            try:
                text = [int(p) for p in text.split(":")]
            except ValueError:
                raise ValueError(f"malformed layer sizes {text!r}, expected e.g. '14:11:9'") from None
    return tuple(int(n) for n in text)


def format_layers(sizes):
    return ":".join(str(n) for n in sizes)


def pyramid_hidden(n_in, n_out):
    """Single hidden-layer size halfway between input and output."""
    return (n_in + n_out) // 2


@dataclass(frozen=True)
class NetworkSpec:
    layer_sizes: tuple
    hidden_activation: str = "tanh"
    output_activation: str = "linear"
    init_seed: int = 0

    def __post_init__(self):
        sizes = parse_layers(self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(n < 1 for n in sizes):
            raise ValueError(f"invalid layer sizes {sizes}: need >= 2 layers of size >= 1")
        if self.hidden_activation not in ACTIVATIONS:
            raise ValueError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation != "linear":
            raise ValueError("only a linear output layer is supported")

    @classmethod
    def pyramid(cls, n_in, n_out, **kwargs):
        return cls((n_in, pyramid_hidden(n_in, n_out), n_out), **kwargs)

    @property
    def n_inputs(self):
        return self.layer_sizes[0]

    @property
    def n_outputs(self):
        return self.layer_sizes[-1]

    @property
    def n_params(self):
        s = self.layer_sizes
        return sum(s[i] * (s[i - 1] + 1) for i in range(1, len(s)))

    def bind(self, split):
        """Check that the input/output sizes match a subset split."""
        if self.n_inputs != len(split.fixed_ids) or self.n_outputs != len(split.moved_ids):
            raise ShapeError(
                f"network {format_layers(self.layer_sizes)} does not match "
                f"{len(split.fixed_ids)} fixed / {len(split.moved_ids)} moved sensors"
            )
        return self

    def with_seed(self, seed):
        return NetworkSpec(self.layer_sizes, self.hidden_activation,
                           self.output_activation, int(seed))

    def to_dict(self):
        return {
            "layer_sizes": list(self.layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "init_seed": int(self.init_seed),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_sizes"]), d.get("hidden_activation", "tanh"),
                   d.get("output_activation", "linear"), d.get("init_seed", 0))


@dataclass(frozen=True, eq=False)
class Network:
    """A :class:`NetworkSpec` together with its weights and biases.

    ``weights[l]`` has shape ``(size[l+1], size[l])``; ``biases[l]`` has
    length ``size[l+1]``.
    """

    spec: NetworkSpec
    weights: tuple
    biases: tuple

    def __post_init__(self):
        s = self.spec.layer_sizes
        ws, bs = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=float)
            b = np.array(b, dtype=float)
            if w.shape != (s[i + 1], s[i]) or b.shape != (s[i + 1],):
                raise ShapeError(f"layer {i + 1}: weight {w.shape} / bias {b.shape} "
                                 f"do not match sizes {s[i]} -> {s[i + 1]}")
            w.setflags(write=False)
            b.setflags(write=False)
            ws.append(w)
            bs.append(b)
        if len(ws) != len(s) - 1 or len(self.weights) != len(self.biases):
            raise ShapeError(f"expected {len(s) - 1} weight layers, got {len(self.weights)}")
        object.__setattr__(self, "weights", tuple(ws))
        object.__setattr__(self, "biases", tuple(bs))


def build_network(spec):
    """Network with weights ~ U[-1/sqrt(fan_in), 1/sqrt(fan_in)] and zero
    biases, drawn from ``spec.init_seed``."""
    rng = np.random.default_rng(spec.init_seed)
    s = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Network(spec, tuple(weights), tuple(biases))


def flatten(net):
    """Parameters as one vector: layer by layer, weights (row-major) then bias."""
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def _unpack(spec, v):
    s = spec.layer_sizes
    layers, pos = [], 0
    for fan_in, fan_out in zip(s[:-1], s[1:]):
        w = v[pos:pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        b = v[pos:pos + fan_out]
        pos += fan_out
        layers.append((w, b))
    return layers


def unflatten(spec, v):
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size != spec.n_params:
        raise ShapeError(f"parameter vector has length {v.size}, expected {spec.n_params}")
    layers = _unpack(spec, v)
    return Network(spec, tuple(w for w, _ in layers), tuple(b for _, b in layers))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _act_grad(name, a):
    # derivative expressed through the activation value
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


def _check_inputs(spec, x):
    x = np.asarray(x, dtype=float)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.n_inputs:
        raise ShapeError(f"input has shape {x.shape}, expected last dimension {spec.n_inputs}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    return x


def _forward_layers(spec, layers, x):
    acts = [x]
    a = x
    last = len(layers) - 1
    for i, (w, b) in enumerate(layers):
        z = a @ w.T + b
        a = z if i == last else _act(spec.hidden_activation, z)
        acts.append(a)
    return acts


def forward(net, x):
    """Output-layer activations for one input vector or a batch of rows."""
    x = _check_inputs(net.spec, x)
    layers = list(zip(net.weights, net.biases))
    return _forward_layers(net.spec, layers, x)[-1]


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Normalized network inputs (fixed sensors) and targets (moved sensors)."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        x = np.array(self.inputs, dtype=float, ndmin=2)
        y = np.array(self.targets, dtype=float, ndmin=2)
        if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
            raise ShapeError(f"inputs {x.shape} and targets {y.shape} must be matrices "
                             "with equal row counts")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("batch contains non-finite values")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)

    def __len__(self):
        return self.inputs.shape[0]

    def check(self, spec):
        if self.inputs.shape[1] != spec.n_inputs or self.targets.shape[1] != spec.n_outputs:
            raise ShapeError(
                f"batch {self.inputs.shape[1]} -> {self.targets.shape[1]} does not match "
                f"network {format_layers(spec.layer_sizes)}"
            )


def loss_and_grad(spec, v, batch):
    """SSE and its gradient with respect to the flat parameter vector ``v``."""
    layers = _unpack(spec, v)
    acts = _forward_layers(spec, layers, batch.inputs)
    resid = acts[-1] - batch.targets
    loss = float(np.sum(resid * resid))

    grad = np.empty_like(v)
    ends = np.cumsum([0] + [w.size + b.size for w, b in layers])
    delta = 2.0 * resid
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        lo = ends[i]
        grad[lo:lo + w.size] = (delta.T @ acts[i]).ravel()
        grad[lo + w.size:ends[i + 1]] = delta.sum(axis=0)
        if i:
            delta = (delta @ w) * _act_grad(spec.hidden_activation, acts[i])
    return loss, grad


def sse_loss(net, batch):
    """Sum over samples of the squared Euclidean output error (no averaging)."""
    batch.check(net.spec)
    resid = forward(net, batch.inputs) - batch.targets
    return float(np.sum(resid * resid))


def gradient(net, batch):
    """Exact gradient of :func:`sse_loss` as a flat parameter vector."""
    batch.check(net.spec)
    return loss_and_grad(net.spec, flatten(net), batch)[1]


class Objective:
    """SSE of a fixed batch as a function of the flat parameter vector."""

    def __init__(self, spec, batch):
        batch.check(spec)
        self.spec = spec
        self.batch = batch
        self.n_evals = 0

    def __call__(self, v):
        self.n_evals += 1
        return loss_and_grad(self.spec, np.asarray(v, dtype=float), self.batch)

    def loss(self, v):
        return self(v)[0]

    def grad(self, v):
        return self(v)[1]
