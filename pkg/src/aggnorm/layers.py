"""Shared neural building blocks: linear/attention/LSTM layers.

Everything here is dtype-agnostic (float32 or float64 per the model's
precision mode) and records onto the active tape through the ops in
`tensor`.  The LSTM runs as one fused tape op backed by the selected
kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    dropout,
    flip_rows,
    make_op,
    matmul,
    relu,
    rows,
    scale,
    softmax,
    transpose,
    xavier_uniform,
)

MASK_BIAS = -1e9  # additive pre-softmax penalty for masked keys


@dataclass
class Runtime:
    """Per-forward execution context: dropout only fires in training."""

    dropout_p: float
    rng: np.random.Generator
    training: bool

    def drop(self, x: Tensor) -> Tensor:
        return dropout(x, self.dropout_p, self.rng, self.training)


def linear_params(prefix, d_in, d_out, rng, dtype):
    w = Parameter(xavier_uniform((d_in, d_out), d_in, d_out, rng, dtype), f"{prefix}.w")
    b = Parameter(np.zeros(d_out, dtype=dtype), f"{prefix}.b")
    return w, b


def affine(x: Tensor, w: Parameter, b: Parameter) -> Tensor:
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# Attention


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask=None, bias=None):
    """softmax(q @ k^T / sqrt(d_k)) @ v with optional key masking.

    key_mask: bool array over keys, True for real tokens; masked keys get
    an additive -1e9 before the softmax, which underflows to an exactly
    zero weight.  bias: optional (n_q, n_k) additive matrix (causal mask).
    Returns (output, weights).
    """
    if q.data.shape[1] != k.data.shape[1]:
        raise ShapeError(f"attention q/k width mismatch: {q.data.shape} vs {k.data.shape}")
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"attention k/v length mismatch: {k.data.shape} vs {v.data.shape}")
    d_k = q.data.shape[1]
    scores = scale(matmul(q, transpose(k)), 1.0 / np.sqrt(d_k))
    extra = None
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any():
            raise ContractError("attention over a fully masked key set")
        extra = np.where(key_mask, 0.0, MASK_BIAS).astype(q.data.dtype)[None, :]
    if bias is not None:
        extra = bias if extra is None else extra + bias
    if extra is not None:
        scores = add(scores, Tensor(np.ascontiguousarray(extra)))
    weights = softmax(scores, axis=1)
    return matmul(weights, v), weights


class MultiHeadAttention:
    """h parallel heads with per-head Q/K/V projections, concatenated in
    head order and affine-projected back to the model width."""

    def __init__(self, prefix, d_q, d_kv, d_model, n_heads, rng, dtype):
        if d_model % n_heads != 0:
            raise ShapeError(f"model width {d_model} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.heads = []
        for i in range(n_heads):
            wq = Parameter(
                xavier_uniform((d_q, self.d_k), d_q, self.d_k, rng, dtype),
                f"{prefix}.head{i}.wq",
            )
            wk = Parameter(
                xavier_uniform((d_kv, self.d_k), d_kv, self.d_k, rng, dtype),
                f"{prefix}.head{i}.wk",
            )
            wv = Parameter(
                xavier_uniform((d_kv, self.d_k), d_kv, self.d_k, rng, dtype),
                f"{prefix}.head{i}.wv",
            )
            self.heads.append((wq, wk, wv))
        self.w_o, self.b_o = linear_params(f"{prefix}.out", d_model, d_model, rng, dtype)

    def __call__(self, q_in: Tensor, kv_in: Tensor, key_mask=None, bias=None, record=None):
        outs = []
        for idx, (wq, wk, wv) in enumerate(self.heads):
            out, weights = scaled_dot_attention(
                matmul(q_in, wq), matmul(kv_in, wk), matmul(kv_in, wv),
                key_mask=key_mask, bias=bias,
            )
            outs.append(out)
            if record is not None:
                record.append((idx, weights.data.copy()))
        return affine(concat(outs, axis=1), self.w_o, self.b_o)

    def parameters(self):
        ps = []
        for wq, wk, wv in self.heads:
            ps += [wq, wk, wv]
        return ps + [self.w_o, self.b_o]


class FeedForward:
    """Position-wise feed-forward: relu(x W1 + b1) W2 + b2."""

    def __init__(self, prefix, d_model, d_inner, rng, dtype):
        self.w1, self.b1 = linear_params(f"{prefix}.ff1", d_model, d_inner, rng, dtype)
        self.w2, self.b2 = linear_params(f"{prefix}.ff2", d_inner, d_model, rng, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return affine(relu(affine(x, self.w1, self.b1)), self.w2, self.b2)

    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2]


def layer_norm_params(prefix, d, dtype):
    g = Parameter(np.ones(d, dtype=dtype), f"{prefix}.gain")
    b = Parameter(np.zeros(d, dtype=dtype), f"{prefix}.bias")
    return g, b


def causal_bias(n, dtype):
    """Upper-triangular -1e9 matrix: position j may attend to keys <= j."""
    return np.triu(np.full((n, n), MASK_BIAS, dtype=dtype), k=1)


# ---------------------------------------------------------------------------
# LSTM


def lstm(x: Tensor, w_x: Parameter, w_h: Parameter, b: Parameter) -> Tensor:
    """Fused LSTM over a full sequence; zero initial state.

    One tape node covers the whole time loop; the backward rule comes
    from the same kernel backend that ran the forward.
    """
    if x.data.shape[0] == 0:
        raise ContractError("lstm over an empty sequence")
    hidden = w_h.data.shape[0]
    if w_x.data.shape != (x.data.shape[1], 4 * hidden) or b.data.shape != (4 * hidden,):
        raise ShapeError(
            f"lstm parameter shapes {w_x.data.shape}/{w_h.data.shape}/{b.data.shape}"
            f" do not fit input {x.data.shape}"
        )
    zeros = np.zeros(hidden, dtype=x.data.dtype)
    h, cache = kernels.lstm_forward(
        np.ascontiguousarray(x.data), w_x.data, w_h.data, b.data, zeros, zeros
    )

    def bwd(g):
        dx, dw_x, dw_h, db, _dh0, _dc0 = kernels.lstm_backward(np.ascontiguousarray(g), cache)
        return dx, dw_x, dw_h, db

    return make_op(h, (x, w_x, w_h, b), bwd)


class BiLSTM:
    """One bidirectional layer; returns per-position concat and the final
    state of each direction (forward at the last step, backward at the
    first original position)."""

    def __init__(self, prefix, d_in, d_hidden, rng, dtype):
        self.d_hidden = d_hidden
        self.fwd = self._direction(f"{prefix}.fwd", d_in, d_hidden, rng, dtype)
        self.bwd = self._direction(f"{prefix}.bwd", d_in, d_hidden, rng, dtype)

    @staticmethod
    def _direction(prefix, d_in, d_hidden, rng, dtype):
        w_x = Parameter(
            xavier_uniform((d_in, 4 * d_hidden), d_in, 4 * d_hidden, rng, dtype),
            f"{prefix}.w_x",
        )
        w_h = Parameter(
            xavier_uniform((d_hidden, 4 * d_hidden), d_hidden, 4 * d_hidden, rng, dtype),
            f"{prefix}.w_h",
        )
        b = Parameter(np.zeros(4 * d_hidden, dtype=dtype), f"{prefix}.b")
        return (w_x, w_h, b)

    def __call__(self, x: Tensor):
        n = x.data.shape[0]
        h_f = lstm(x, *self.fwd)
        h_b_rev = lstm(flip_rows(x), *self.bwd)
        h_b = flip_rows(h_b_rev)
        outputs = concat([h_f, h_b], axis=1)
        final_f = rows(h_f, [n - 1])
        final_b = rows(h_b_rev, [n - 1])
        return outputs, final_f, final_b

    def pooled(self, x: Tensor) -> Tensor:
        """Concat of final forward and final backward states, shape (1, 2H)."""
        _, final_f, final_b = self(x)
        return concat([final_f, final_b], axis=1)

    def parameters(self):
        return [*self.fwd, *self.bwd]
