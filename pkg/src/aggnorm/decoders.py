"""Task heads: the BiLSTM sentence classifier and the seq2seq normalizer.

Both consume the per-token concatenation of shared and private encoder
outputs.  The classifier pools the BiLSTM's final forward and backward
states; the normalizer is a causal transformer decoder with cross
attention over the 2*d_model memory, trained with teacher forcing and
decoded greedily.
"""

from __future__ import annotations

import numpy as np

from .embeddings import BOS, EOS
from .errors import ContractError, SequenceLengthError
from .layers import (
    BiLSTM,
    FeedForward,
    MultiHeadAttention,
    Runtime,
    affine,
    causal_bias,
    layer_norm_params,
    linear_params,
)
from .tensor import (
    Parameter,
    Tensor,
    add,
    concat,
    layer_norm,
    log,
    maximum_const,
    neg,
    pick_rows,
    reshape,
    rows,
    softmax,
    tmean,
    xavier_uniform,
)


class ClassifierHead:
    """Single-layer BiLSTM over [shared; private] rows, pooled final
    states, affine projection to the label distribution."""

    def __init__(self, d_model, d_hidden, n_labels, rng, dtype):
        self.n_labels = n_labels
        self.bilstm = BiLSTM("cls.bilstm", 2 * d_model, d_hidden, rng, dtype)
        self.w_out, self.b_out = linear_params("cls.out", 2 * d_hidden, n_labels, rng, dtype)

    def classify(self, shared: Tensor, private: Tensor, mask=None) -> Tensor:
        """Label distribution, shape (n_labels,)."""
        x = _join_features(shared, private, mask)
        pooled = self.bilstm.pooled(x)
        dist = softmax(affine(pooled, self.w_out, self.b_out), axis=1)
        return reshape(dist, (self.n_labels,))

    def parameters(self):
        return self.bilstm.parameters() + [self.w_out, self.b_out]


def _join_features(shared: Tensor, private: Tensor, mask):
    if shared.data.shape[0] != private.data.shape[0]:
        raise ContractError(
            f"shared/private length mismatch: {shared.data.shape[0]}"
            f" vs {private.data.shape[0]}"
        )
    x = concat([shared, private], axis=1)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ContractError("fully padded sequence")
        if not mask.all():
            # padding must be a suffix so the recurrent pass sees a prefix
            n_real = int(mask.sum())
            if not mask[:n_real].all():
                raise ContractError("padding mask must be a contiguous suffix")
            x = rows(x, np.arange(n_real))
    return x


class DecoderLayer:
    def __init__(self, prefix, d_model, d_mem, n_heads, rng, dtype):
        self.self_attn = MultiHeadAttention(f"{prefix}.self", d_model, d_model,
                                            d_model, n_heads, rng, dtype)
        self.cross_attn = MultiHeadAttention(f"{prefix}.cross", d_model, d_mem,
                                             d_model, n_heads, rng, dtype)
        self.ff = FeedForward(f"{prefix}", d_model, 4 * d_model, rng, dtype)
        self.ln1 = layer_norm_params(f"{prefix}.ln1", d_model, dtype)
        self.ln2 = layer_norm_params(f"{prefix}.ln2", d_model, dtype)
        self.ln3 = layer_norm_params(f"{prefix}.ln3", d_model, dtype)

    def __call__(self, x, memory, mem_mask, bias, rt: Runtime):
        x = layer_norm(add(x, rt.drop(self.self_attn(x, x, bias=bias))), *self.ln1)
        x = layer_norm(
            add(x, rt.drop(self.cross_attn(x, memory, key_mask=mem_mask))), *self.ln2
        )
        x = layer_norm(add(x, rt.drop(self.ff(x))), *self.ln3)
        return x

    def parameters(self):
        return (
            self.self_attn.parameters()
            + self.cross_attn.parameters()
            + self.ff.parameters()
            + [*self.ln1, *self.ln2, *self.ln3]
        )


class NormalizerDecoder:
    """Causal transformer decoder over the target vocabulary."""

    def __init__(self, n_targets, d_model, d_mem, n_heads, n_layers, max_len, rng, dtype):
        self.n_targets = n_targets
        self.d_model = d_model
        self.max_len = max_len
        self.embed = Parameter(
            xavier_uniform((n_targets, d_model), n_targets, d_model, rng, dtype),
            "dec.embed",
        )
        self.pos = Parameter(
            xavier_uniform((max_len, d_model), max_len, d_model, rng, dtype), "dec.pos"
        )
        self.layers = [
            DecoderLayer(f"dec.layer{i}", d_model, d_mem, n_heads, rng, dtype)
            for i in range(n_layers)
        ]
        self.w_out, self.b_out = linear_params("dec.out", d_model, n_targets, rng, dtype)

    def _states(self, memory, mem_mask, prefix_ids, rt: Runtime) -> Tensor:
        m = len(prefix_ids)
        if m > self.max_len:
            raise SequenceLengthError(f"target length {m} exceeds maximum {self.max_len}")
        x = add(rows(self.embed, prefix_ids), rows(self.pos, np.arange(m)))
        bias = causal_bias(m, x.data.dtype)
        for layer in self.layers:
            x = layer(x, memory, mem_mask, bias, rt)
        return x

    def step_distributions(self, memory, mem_mask, prefix_ids, rt: Runtime) -> Tensor:
        """Next-token distribution for every position of the prefix."""
        states = self._states(memory, mem_mask, prefix_ids, rt)
        return softmax(affine(states, self.w_out, self.b_out), axis=1)

    def loss(self, memory, mem_mask, target_ids, rt: Runtime, clamp_counter=None) -> Tensor:
        """Teacher-forced cross-entropy, averaged per predicted token.

        target_ids must be the full BOS ... EOS wrapped sequence.
        """
        target_ids = list(target_ids)
        if len(target_ids) < 2 or target_ids[0] != BOS or target_ids[-1] != EOS:
            raise ContractError("target must be a BOS ... EOS wrapped sequence")
        dists = self.step_distributions(memory, mem_mask, target_ids[:-1], rt)
        gold = np.asarray(target_ids[1:], dtype=np.intp)
        picked = pick_rows(dists, gold)
        if clamp_counter is not None:
            clamp_counter.count(picked.data)
        return neg(tmean(log(maximum_const(picked, 1e-12))))

    def greedy_decode(self, memory, mem_mask, max_len, rt: Runtime, trace=None):
        """Greedy decoding from BOS; returns (ids without BOS/EOS, truncated).

        Optionally appends each step's next-token distribution to `trace`.
        """
        max_len = min(max_len, self.max_len - 1)
        prefix = [BOS]
        truncated = True
        for _ in range(max_len):
            dists = self.step_distributions(memory, mem_mask, prefix, rt)
            step = dists.data[-1]
            if trace is not None:
                trace.append(step.copy())
            nxt = int(np.argmax(step))
            if nxt == EOS:
                truncated = False
                break
            prefix.append(nxt)
        return prefix[1:], truncated

    def parameters(self):
        ps = [self.embed, self.pos]
        for layer in self.layers:
            ps += layer.parameters()
        return ps + [self.w_out, self.b_out]
