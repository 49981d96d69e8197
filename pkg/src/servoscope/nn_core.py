"""Dense feedforward network with exact backpropagation.

The network hosts the task function: a map from a preprocessed state-change
image to a reward vector in [-1, 1]^d.  Everything is float64 and written
against plain numpy so gradients can be checked against finite differences.

Weights file layout (little-endian)::

    b"TFN1"                      magic
    u32                          layer count L
    L x (u32 in, u32 out, u8 act) layer headers, act 0=tanh 1=identity
    f64[...]                     every weight matrix, row-major, layer order
    f64[...]                     every bias vector, layer order
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, FormatError, NumericError, ShapeError

TANH = "tanh"
IDENTITY = "identity"
_ACT_CODES = {TANH: 0, IDENTITY: 1}
_CODE_ACTS = {v: k for k, v in _ACT_CODES.items()}

MAGIC = b"TFN1"
DEFAULT_HIDDEN = (512, 256, 128, 64)

# first-layer products switch to a gathered column subset below this density
_SPARSE_DENSITY = 0.25


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = TANH

    def __post_init__(self):
        if int(self.in_dim) < 1 or int(self.out_dim) < 1:
            raise ConfigError(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in _ACT_CODES:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass
class Layer:
    weights: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    spec: LayerSpec


@dataclass
class NetworkParams:
    layers: list[Layer]

    @property
    def input_dim(self) -> int:
        return self.layers[0].spec.in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    @property
    def specs(self) -> list[LayerSpec]:
        return [layer.spec for layer in self.layers]

    def n_parameters(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.layers)

    def copy(self) -> "NetworkParams":
        return NetworkParams([Layer(l.weights.copy(), l.bias.copy(), l.spec) for l in self.layers])

    def flat(self) -> np.ndarray:
        """All weights then all biases as one vector (file payload order)."""
        return np.concatenate(
            [l.weights.ravel() for l in self.layers] + [l.bias for l in self.layers]
        )

    def equals(self, other: "NetworkParams") -> bool:
        """Bit-exact comparison of structure and values."""
        if self.specs != other.specs:
            return False
        return all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
            for a, b in zip(self.layers, other.layers)
        )


@dataclass
class Gradient:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __add__(self, other: "Gradient") -> "Gradient":
        _check_congruent(self, other)
        return Gradient(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + list(self.biases))


@dataclass
class ForwardCache:
    activations: list[np.ndarray]  # input, then output of every layer
    preacts: list[np.ndarray]


def default_layer_specs(input_dim: int = 4096, dof: int = 3,
                        hidden: Sequence[int] = DEFAULT_HIDDEN) -> list[LayerSpec]:
    dims = [input_dim, *hidden, dof]
    return [LayerSpec(i, o, TANH) for i, o in zip(dims[:-1], dims[1:])]


def check_specs(specs: Sequence[LayerSpec]) -> None:
    if not specs:
        raise ConfigError("network needs at least one layer")
    for i in range(len(specs) - 1):
        if specs[i].out_dim != specs[i + 1].in_dim:
            raise ConfigError(
                f"layer {i} out_dim {specs[i].out_dim} != layer {i + 1} in_dim {specs[i + 1].in_dim}"
            )
    if specs[-1].activation != TANH:
        raise ConfigError("output layer must use tanh so rewards stay in [-1, 1]")


def init_network(specs: Sequence[LayerSpec], seed: int) -> NetworkParams:
    """Glorot-uniform weights, zero biases, reproducible from ``seed``."""
    check_specs(specs)
    rng = np.random.default_rng(seed)
    layers = []
    for spec in specs:
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        w = rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim))
        layers.append(Layer(w, np.zeros(spec.out_dim), spec))
    return NetworkParams(layers)


def zeros_like_network(specs: Sequence[LayerSpec]) -> NetworkParams:
    check_specs(specs)
    return NetworkParams(
        [Layer(np.zeros((s.out_dim, s.in_dim)), np.zeros(s.out_dim), s) for s in specs]
    )


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(z) if activation == TANH else z


def _activation_slope(a: np.ndarray, activation: str) -> np.ndarray:
    # expressed through the activation value: tanh' = 1 - tanh^2
    return 1.0 - a * a if activation == TANH else np.ones_like(a)


def _first_layer(w: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(x)
    if nz.size < _SPARSE_DENSITY * x.size:
        return w[:, nz] @ x[nz] + b
    return w @ x + b


def forward(params: NetworkParams, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != params.input_dim:
        raise ShapeError(f"input length {x.shape} does not match input_dim {params.input_dim}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite network input")
    activations = [x]
    preacts = []
    a = x
    for i, layer in enumerate(params.layers):
        if i == 0:
            z = _first_layer(layer.weights, layer.bias, a)
        else:
            z = layer.weights @ a + layer.bias
        a = _activate(z, layer.spec.activation)
        preacts.append(z)
        activations.append(a)
    return a, ForwardCache(activations, preacts)


def _deltas(params: NetworkParams, cache: ForwardCache, output_error) -> list[np.ndarray]:
    e = np.asarray(output_error, dtype=np.float64)
    if e.shape != (params.output_dim,):
        raise ShapeError(f"output_error shape {e.shape} != ({params.output_dim},)")
    if len(cache.activations) != len(params.layers) + 1:
        raise ShapeError("cache does not belong to this network")
    n = len(params.layers)
    deltas: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    d = e * _activation_slope(cache.activations[-1], params.layers[-1].spec.activation)
    deltas[-1] = d
    for i in range(n - 1, 0, -1):
        below = params.layers[i - 1].spec.activation
        d = (params.layers[i].weights.T @ d) * _activation_slope(cache.activations[i], below)
        deltas[i - 1] = d
    return deltas


def backprop(params: NetworkParams, cache: ForwardCache, output_error) -> Gradient:
    """Gradient of ``output_error . y`` with respect to every parameter."""
    deltas = _deltas(params, cache, output_error)
    return Gradient(
        [np.outer(d, a) for d, a in zip(deltas, cache.activations[:-1])],
        [d.copy() for d in deltas],
    )


def _check_congruent(a, b) -> None:
    wa = a.weights if isinstance(a, Gradient) else [l.weights for l in a.layers]
    ba = a.biases if isinstance(a, Gradient) else [l.bias for l in a.layers]
    if len(wa) != len(b.weights) or any(
        x.shape != y.shape for x, y in zip(wa + ba, list(b.weights) + list(b.biases))
    ):
        raise ShapeError("gradient is not shape-congruent with the network")


def ascent_step(params: NetworkParams, grad: Gradient, lr: float) -> NetworkParams:
    """Return ``params + lr * grad`` (the objective is maximised)."""
    _check_congruent(params, grad)
    return NetworkParams(
        [
            Layer(l.weights + lr * gw, l.bias + lr * gb, l.spec)
            for l, gw, gb in zip(params.layers, grad.weights, grad.biases)
        ]
    )


def ascend_inplace(params: NetworkParams, terms: Sequence[tuple[ForwardCache, np.ndarray]],
                   lr: float) -> None:
    """Fused ``ascent_step`` over a sum of backprop terms, mutating ``params``.

    Equivalent to summing ``backprop(params, cache, err)`` over ``terms`` and
    applying one ascent step, but never materialises the dense first-layer
    gradient, so sparse difference images train much faster.
    """
    all_deltas = [_deltas(params, c, e) for c, e in terms]
    for i, layer in enumerate(params.layers):
        d = np.stack([ds[i] for ds in all_deltas], axis=1)
        a = np.stack([c.activations[i] for c, _ in terms], axis=1)
        if i == 0:
            nz = np.flatnonzero(np.any(a != 0.0, axis=1))
            if nz.size < _SPARSE_DENSITY * a.shape[0]:
                layer.weights[:, nz] += lr * (d @ a[nz].T)
                layer.bias += lr * d.sum(axis=1)
                continue
        layer.weights += lr * (d @ a.T)
        layer.bias += lr * d.sum(axis=1)


def save_network(params: NetworkParams, path) -> None:
    header = [MAGIC, struct.pack("<I", len(params.layers))]
    for spec in params.specs:
        header.append(struct.pack("<IIB", spec.in_dim, spec.out_dim, _ACT_CODES[spec.activation]))
    payload = params.flat().astype("<f8").tobytes()
    Path(path).write_bytes(b"".join(header) + payload)


def load_network(path) -> NetworkParams:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic bytes")
    (n_layers,) = struct.unpack_from("<I", data, 4)
    offset = 8
    if n_layers == 0 or len(data) < offset + 9 * n_layers:
        raise FormatError(f"{path}: truncated layer headers")
    specs = []
    for _ in range(n_layers):
        in_dim, out_dim, code = struct.unpack_from("<IIB", data, offset)
        offset += 9
        if code not in _CODE_ACTS:
            raise FormatError(f"{path}: unknown activation code {code}")
        try:
            specs.append(LayerSpec(in_dim, out_dim, _CODE_ACTS[code]))
        except ConfigError as exc:
            raise FormatError(f"{path}: {exc}") from exc
    try:
        check_specs(specs)
    except ConfigError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    n_values = sum(s.in_dim * s.out_dim + s.out_dim for s in specs)
    if len(data) - offset != 8 * n_values:
        raise FormatError(
            f"{path}: payload holds {len(data) - offset} bytes, header implies {8 * n_values}"
        )
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)
    layers = []
    pos = 0
    for s in specs:
        n = s.in_dim * s.out_dim
        layers.append(Layer(flat[pos:pos + n].reshape(s.out_dim, s.in_dim).copy(), None, s))
        pos += n
    for layer in layers:
        layer.bias = flat[pos:pos + layer.spec.out_dim].copy()
        pos += layer.spec.out_dim
    if not np.all(np.isfinite(flat)):
        raise FormatError(f"{path}: non-finite parameter values")
    return NetworkParams(layers)
