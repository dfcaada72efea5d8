"""Dense-layer numeric core with hand-written reverse-mode gradients.

The network architecture in this package is static, so each primitive exposes
an explicit forward/backward pair instead of a general autodiff tape; the
discriminator module composes them. All math is 64-bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import IOFailure, SchemaVersionMismatch, ShapeMismatch

BCE_CLAMP = 1e-7

WEIGHTS_MAGIC = b"PSGW"
WEIGHTS_VERSION = 1


@dataclass
class LinearLayer:
    """y = W x + b with W of shape (out, in)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeMismatch(
                f"inconsistent layer shapes {self.weights.shape} / {self.bias.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayer":
        # Glorot-uniform bound; biases start at zero.
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        return cls(rng.uniform(-bound, bound, size=(out_dim, in_dim)), np.zeros(out_dim))


def linear_forward(layer: LinearLayer, x: np.ndarray) -> np.ndarray:
    """Apply the layer to a batch of row vectors, (n, in) -> (n, out)."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeMismatch(f"input {x.shape} incompatible with in_dim {layer.in_dim}")
    return x @ layer.weights.T + layer.bias


def linear_backward(
    layer: LinearLayer, cached_input: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients: returns (grad_input, grad_weights, grad_bias)."""
    if grad_out.shape != (cached_input.shape[0], layer.out_dim):
        raise ShapeMismatch(f"grad_out {grad_out.shape} mismatches layer {layer.out_dim}")
    grad_in = grad_out @ layer.weights
    grad_w = grad_out.T @ cached_input
    grad_b = grad_out.sum(axis=0)
    return grad_in, grad_w, grad_b


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(cached_input: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (cached_input > 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(cached_output, grad_out):
    return grad_out * cached_output * (1.0 - cached_output)


def bce(p: float, y: float) -> float:
    """Binary cross-entropy with p clamped into [1e-7, 1 - 1e-7]."""
    p = min(max(float(p), BCE_CLAMP), 1.0 - BCE_CLAMP)
    return -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))


def bce_backward(p: float, y: float) -> float:
    """d bce / d p at the clamped probability."""
    p = min(max(float(p), BCE_CLAMP), 1.0 - BCE_CLAMP)
    return -(y / p) + (1.0 - y) / (1.0 - p)


@dataclass
class AdamState:
    """First/second moment buffers mirroring a parameter dict."""

    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """One Adam update (in place) with bias correction; returns params."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ShapeMismatch(f"grad shape {g.shape} != param shape {p.shape} for {key}")
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
    return params


def save_weight_file(path, dims: tuple[int, int, int, int], delta: float, arrays) -> None:
    """Write weights: magic, version, architecture dims, delta, then the
    concatenated float64 values in declaration order (little-endian)."""
    flat = [np.asarray(a, dtype="<f8").ravel() for a in arrays]
    count = int(sum(a.size for a in flat))
    header = struct.pack(
        "<4sIIIIIdQ", WEIGHTS_MAGIC, WEIGHTS_VERSION, *dims, float(delta), count
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            for a in flat:
                fh.write(a.tobytes())
    except OSError as exc:
        raise IOFailure(f"cannot write weights to {path}: {exc}") from exc


def load_weight_file(path) -> tuple[tuple[int, int, int, int], float, np.ndarray]:
    """Read a weights file; returns (dims, delta, flat float64 values)."""
    header_size = struct.calcsize("<4sIIIIIdQ")
    try:
        with open(path, "rb") as fh:
            header = fh.read(header_size)
            if len(header) != header_size:
                raise SchemaVersionMismatch(f"{path}: truncated weights header")
            magic, version, d0, d1, d2, d3, delta, count = struct.unpack(
                "<4sIIIIIdQ", header
            )
            if magic != WEIGHTS_MAGIC:
                raise SchemaVersionMismatch(f"{path}: not a weights file")
            if version != WEIGHTS_VERSION:
                raise SchemaVersionMismatch(
                    f"{path}: weights schema {version}, expected {WEIGHTS_VERSION}"
                )
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            if data.size != count:
                raise SchemaVersionMismatch(f"{path}: truncated weights payload")
    except OSError as exc:
        raise IOFailure(f"cannot read weights from {path}: {exc}") from exc
    return (d0, d1, d2, d3), float(delta), data.astype(float)
