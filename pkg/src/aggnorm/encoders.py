"""The three self-attention encoder stacks (shared and two private).

Each layer is multi-head attention + residual + layer norm, then a
position-wise feed-forward + residual + layer norm (post-norm order).
The first layer of a stack projects the concatenated input embedding up
to the model width.
"""

from __future__ import annotations

import numpy as np

from .errors import SequenceLengthError
from .layers import (
    FeedForward,
    MultiHeadAttention,
    Runtime,
    affine,
    layer_norm_params,
    linear_params,
)
from .tensor import Tensor, add, layer_norm

ROLE_SHARED = "shared"
ROLE_ALD = "ald_private"
ROLE_TN = "tn_private"


class AttentionRecord:
    """Per-layer, per-head attention weights captured during a forward."""

    def __init__(self, role: str, tokens=None):
        self.role = role
        self.tokens = list(tokens) if tokens is not None else None
        self.weights: dict[tuple[int, int], np.ndarray] = {}

    def add(self, layer: int, head: int, matrix: np.ndarray):
        self.weights[(layer, head)] = matrix

    def items(self):
        return sorted(self.weights.items())


def write_attention_dump(records, path):
    """Serialize AttentionRecords as TAB-separated text.

    One `block` header per (encoder, layer, head), then the token row and
    one weight row per query position, floats at full precision.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            tokens = record.tokens or []
            for (layer, head), matrix in record.items():
                fh.write(f"block\tencoder={record.role}\tlayer={layer}\thead={head}\n")
                fh.write("tokens\t" + "\t".join(tokens) + "\n")
                for i in range(matrix.shape[0]):
                    cells = "\t".join(repr(float(v)) for v in matrix[i])
                    fh.write(f"row\t{i}\t{cells}\n")


def read_attention_dump(path):
    """Parse write_attention_dump output back into AttentionRecords by role."""
    records: dict[str, AttentionRecord] = {}
    current = None
    rows = []
    key = None

    def flush():
        if current is not None and rows:
            records[current].add(key[0], key[1], np.asarray(rows, dtype=np.float64))

    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "block":
                flush()
                rows = []
                fields = dict(kv.split("=", 1) for kv in parts[1:])
                role = fields["encoder"]
                if role not in records:
                    records[role] = AttentionRecord(role)
                current = role
                key = (int(fields["layer"]), int(fields["head"]))
            elif parts[0] == "tokens":
                records[current].tokens = parts[1:]
            elif parts[0] == "row":
                rows.append([float(v) for v in parts[2:]])
    flush()
    return records


class EncoderLayer:
    def __init__(self, prefix, d_model, n_heads, rng, dtype):
        self.attn = MultiHeadAttention(f"{prefix}.attn", d_model, d_model, d_model,
                                       n_heads, rng, dtype)
        self.ff = FeedForward(f"{prefix}", d_model, 4 * d_model, rng, dtype)
        self.ln1 = layer_norm_params(f"{prefix}.ln1", d_model, dtype)
        self.ln2 = layer_norm_params(f"{prefix}.ln2", d_model, dtype)

    def __call__(self, x: Tensor, mask, rt: Runtime, record=None) -> Tensor:
        heads = [] if record is not None else None
        attn_out = self.attn(x, x, key_mask=mask, record=heads)
        if record is not None:
            for head, weights in heads:
                record(head, weights)
        x = layer_norm(add(x, rt.drop(attn_out)), *self.ln1)
        x = layer_norm(add(x, rt.drop(self.ff(x))), *self.ln2)
        return x

    def parameters(self):
        return self.attn.parameters() + self.ff.parameters() + [*self.ln1, *self.ln2]


class EncoderStack:
    """A role-tagged stack of encoder layers over the shared input space."""

    def __init__(self, role, d_in, d_model, n_heads, n_layers, max_len, rng, dtype):
        self.role = role
        self.d_model = d_model
        self.max_len = max_len
        self.in_proj = linear_params(f"enc_{role}.in", d_in, d_model, rng, dtype)
        self.layers = [
            EncoderLayer(f"enc_{role}.layer{i}", d_model, n_heads, rng, dtype)
            for i in range(n_layers)
        ]

    def encode(self, x: Tensor, mask=None, rt: Runtime | None = None,
               record: AttentionRecord | None = None) -> Tensor:
        n = x.data.shape[0]
        if n > self.max_len:
            raise SequenceLengthError(f"sequence length {n} exceeds maximum {self.max_len}")
        if rt is None:
            rt = Runtime(0.0, np.random.default_rng(0), False)
        h = affine(x, *self.in_proj)
        for li, layer in enumerate(self.layers):
            sink = None
            if record is not None:
                sink = lambda head, w, _li=li: record.add(_li, head, w)
            h = layer(h, mask, rt, record=sink)
        return h

    def parameters(self):
        ps = [*self.in_proj]
        for layer in self.layers:
            ps += layer.parameters()
        return ps
