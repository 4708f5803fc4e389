"""Bidirectional GRU/LSTM layers.

Input weights for all gates are fused into one matrix so the input
projection is a single matmul per sequence; the recurrent projection
stays per-step. Gate row order: GRU [r, z, n], LSTM [i, f, o, g].
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, broadcast_to, concat, matmul, reshape, sigmoid, tanh
from .errors import ShapeError


@dataclass(frozen=True)
class BiRnnSpec:
    cell: str  # "gru" | "lstm"
    input_dim: int
    hidden_dim: int  # per direction
    layers: int = 1

    def __post_init__(self):
        if self.cell not in ("gru", "lstm"):
            raise ValueError(f"unknown cell kind {self.cell!r}")
        if self.layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ValueError("BiRnnSpec dims must be positive")

    @property
    def gates(self):
        return 3 if self.cell == "gru" else 4

    @property
    def output_dim(self):
        return 2 * self.hidden_dim


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_birnn(rng, params, prefix, spec):
    """Orthogonal recurrent blocks per gate, uniform input weights, zero bias."""
    h = spec.hidden_dim
    for layer in range(spec.layers):
        in_dim = spec.input_dim if layer == 0 else spec.output_dim
        bound = 1.0 / np.sqrt(h)
        for direction in ("fw", "bw"):
            base = f"{prefix}.l{layer}.{direction}"
            w_x = rng.uniform(-bound, bound, size=(spec.gates * h, in_dim))
            w_h = np.concatenate([_orthogonal(rng, h) for _ in range(spec.gates)])
            params[f"{base}.w_x"] = Tensor(w_x, requires_grad=True,
                                           name=f"{base}.w_x")
            params[f"{base}.w_h"] = Tensor(w_h, requires_grad=True,
                                           name=f"{base}.w_h")
            params[f"{base}.b"] = Tensor(np.zeros(spec.gates * h),
                                         requires_grad=True, name=f"{base}.b")


def _gru_direction(x, w_x, w_h, b, reverse):
    h = w_h.shape[1]
    k = x.shape[1]
    a = matmul(w_x, x) + broadcast_to(reshape(b, (3 * h, 1)), (3 * h, k))
    state = Tensor(np.zeros((h, 1)))
    order = range(k - 1, -1, -1) if reverse else range(k)
    outs = [None] * k
    for t in order:
        at = a[:, t:t + 1]
        u = matmul(w_h, state)
        r = sigmoid(at[0:h] + u[0:h])
        z = sigmoid(at[h:2 * h] + u[h:2 * h])
        n = tanh(at[2 * h:3 * h] + r * u[2 * h:3 * h])
        state = (1.0 - z) * n + z * state
        outs[t] = state
    return concat(outs, axis=1)


def _lstm_direction(x, w_x, w_h, b, reverse):
    h = w_h.shape[1]
    k = x.shape[1]
    a = matmul(w_x, x) + broadcast_to(reshape(b, (4 * h, 1)), (4 * h, k))
    state = Tensor(np.zeros((h, 1)))
    cell = Tensor(np.zeros((h, 1)))
    order = range(k - 1, -1, -1) if reverse else range(k)
    outs = [None] * k
    for t in order:
        at = a[:, t:t + 1]
        u = matmul(w_h, state)
        i = sigmoid(at[0:h] + u[0:h])
        f = sigmoid(at[h:2 * h] + u[h:2 * h])
        o = sigmoid(at[2 * h:3 * h] + u[2 * h:3 * h])
        g = tanh(at[3 * h:4 * h] + u[3 * h:4 * h])
        cell = f * cell + i * g
        state = o * tanh(cell)
        outs[t] = state
    return concat(outs, axis=1)


def birnn(x, params, prefix, spec):
    """Stacked bidirectional recurrence: (input_dim, K) -> (2*hidden, K)."""
    from .autodiff import as_tensor
    x = as_tensor(x)
    if x.shape[0] != spec.input_dim:
        raise ShapeError("birnn", x.shape, detail=f"expected {spec.input_dim} rows")
    run = _gru_direction if spec.cell == "gru" else _lstm_direction
    out = x
    for layer in range(spec.layers):
        base = f"{prefix}.l{layer}"
        fw = run(out, params[f"{base}.fw.w_x"], params[f"{base}.fw.w_h"],
                 params[f"{base}.fw.b"], reverse=False)
        bw = run(out, params[f"{base}.bw.w_x"], params[f"{base}.bw.w_h"],
                 params[f"{base}.bw.b"], reverse=True)
        out = concat([fw, bw], axis=0)
    return out
