"""Adversarial task discriminator over shared encoder features.

A two-layer BiLSTM reads only the shared representation and predicts
which task produced it.  During training the features pass through a
gradient-reversal op first, so one backward pass trains the discriminator
while pushing the shared encoder toward task-indistinguishable features.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .layers import BiLSTM, affine, linear_params
from .tensor import Tensor, concat, grad_reverse, reshape, rows, softmax

TASK_ALD = 0
TASK_TN = 1


class TaskDiscriminator:
    def __init__(self, d_model, d_hidden, rng, dtype):
        self.layer1 = BiLSTM("disc.bilstm0", d_model, d_hidden, rng, dtype)
        self.layer2 = BiLSTM("disc.bilstm1", 2 * d_hidden, d_hidden, rng, dtype)
        self.w_out, self.b_out = linear_params("disc.out", 2 * d_hidden, 2, rng, dtype)

    def discriminate(self, shared: Tensor, mask=None, reverse=False) -> Tensor:
        """Task-id distribution over {ALD, TN}, shape (2,)."""
        x = grad_reverse(shared) if reverse else shared
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if not mask.any():
                raise ContractError("fully padded sequence")
            n_real = int(mask.sum())
            if not mask[:n_real].all():
                raise ContractError("padding mask must be a contiguous suffix")
            x = rows(x, np.arange(n_real))
        seq, _, _ = self.layer1(x)
        _, final_f, final_b = self.layer2(seq)
        pooled = concat([final_f, final_b], axis=1)
        return reshape(softmax(affine(pooled, self.w_out, self.b_out), axis=1), (2,))

    def parameters(self):
        return self.layer1.parameters() + self.layer2.parameters() + [self.w_out, self.b_out]
