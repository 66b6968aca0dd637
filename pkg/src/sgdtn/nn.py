"""Small feed-forward approximators with hand-written backpropagation.

Hidden layers use tanh, the output layer is linear. Parameters are kept as
float64 arrays so finite-difference checks stay meaningful.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

CHECKPOINT_MAGIC = b"SGDTPARM"
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    layout: tuple
    weights: list
    biases: list

    @classmethod
    def init(cls, layout, rng: np.random.Generator, out_scale: float = 0.1) -> "PolicyParams":
        layout = tuple(int(d) for d in layout)
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(layout[:-1], layout[1:])):
            last = i == len(layout) - 2
            scale = out_scale / np.sqrt(fan_in) if last else np.sqrt(1.0 / fan_in)
            weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(layout, weights, biases)

    @classmethod
    def zeros(cls, layout) -> "PolicyParams":
        layout = tuple(int(d) for d in layout)
        return cls(layout, [np.zeros((a, b)) for a, b in zip(layout[:-1], layout[1:])],
                   [np.zeros(b) for b in layout[1:]])

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, layout, vec) -> "PolicyParams":
        layout = tuple(int(d) for d in layout)
        vec = np.asarray(vec, float)
        weights, biases, pos = [], [], 0
        for a, b in zip(layout[:-1], layout[1:]):
            weights.append(vec[pos:pos + a * b].reshape(a, b).copy())
            pos += a * b
            biases.append(vec[pos:pos + b].copy())
            pos += b
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, layout needs {pos}")
        return cls(layout, weights, biases)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.layout, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def axpy(self, scale: float, other: "PolicyParams") -> "PolicyParams":
        """Return self + scale * other."""
        check_layout(self, other)
        return PolicyParams(self.layout,
                            [w + scale * o for w, o in zip(self.weights, other.weights)],
                            [b + scale * o for b, o in zip(self.biases, other.biases)])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


class LayoutMismatch(ValueError):
    pass


def check_layout(a: PolicyParams, b: PolicyParams) -> None:
    if tuple(a.layout) != tuple(b.layout):
        raise LayoutMismatch(f"layouts differ: {a.layout} vs {b.layout}")


def forward(params: PolicyParams, x):
    """Evaluate the network on a batch ``x`` of shape (batch, layout[0])."""
    h = np.atleast_2d(np.asarray(x, float))
    acts = [h]
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == n - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def backward(params: PolicyParams, acts, dout):
    """Backpropagate ``dout`` (d loss / d output); returns (param grads, d loss / d input)."""
    g = np.atleast_2d(np.asarray(dout, float))
    n = len(params.weights)
    gw, gb = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (1.0 - np.square(acts[i + 1]))
        gw[i] = acts[i].T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return PolicyParams(params.layout, gw, gb), g


class Adam:
    """Adam over a flat view of one PolicyParams layout."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 max_norm: float | None = 10.0):
        self.lr, self.beta1, self.beta2, self.eps, self.max_norm = lr, beta1, beta2, eps, max_norm
        self.m = self.v = None
        self.t = 0

    def step(self, params: PolicyParams, grad: PolicyParams) -> PolicyParams:
        gs = grad.weights + grad.biases
        if self.max_norm is not None:
            norm = np.sqrt(sum(float(np.vdot(g, g)) for g in gs))
            if norm > self.max_norm:
                gs = [g * (self.max_norm / norm) for g in gs]
        if self.m is None:
            self.m = [np.zeros_like(g) for g in gs]
            self.v = [np.zeros_like(g) for g in gs]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        out = []
        for p, g, m, v in zip(params.weights + params.biases, gs, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            out.append(p - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        n = len(params.weights)
        return PolicyParams(params.layout, out[:n], out[n:])


def sgd_step(params: PolicyParams, grad: PolicyParams, lr: float) -> PolicyParams:
    return params.axpy(-lr, grad)


# --- checkpoints ----------------------------------------------------------
# little-endian: magic, u16 version, u16 n_dims, n_dims * u32 layout, f64 payload

def dumps_params(params: PolicyParams) -> bytes:
    header = CHECKPOINT_MAGIC + struct.pack("<HH", CHECKPOINT_VERSION, len(params.layout))
    header += struct.pack(f"<{len(params.layout)}I", *params.layout)
    return header + params.flat().astype("<f8").tobytes()


def loads_params(data: bytes) -> PolicyParams:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not a parameter checkpoint")
    version, ndim = struct.unpack_from("<HH", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    layout = struct.unpack_from(f"<{ndim}I", data, 12)
    vec = np.frombuffer(data, dtype="<f8", offset=12 + 4 * ndim)
    return PolicyParams.from_flat(layout, vec.astype(float))


def save_params(path, params: PolicyParams) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_params(params))


def load_params(path) -> PolicyParams:
    with open(path, "rb") as fh:
        return loads_params(fh.read())
