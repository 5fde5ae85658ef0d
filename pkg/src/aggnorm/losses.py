"""Training objectives: task cross-entropy, adversarial loss, orthogonality
penalty, and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DivergenceError
from .tensor import (
    Tensor,
    add,
    concat,
    cross_entropy,
    frobenius_sq,
    matmul,
    reshape,
    scale,
    transpose,
)

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Coupling coefficients for the adversarial and orthogonality terms."""

    lam: float = 0.05
    beta: float = 0.01

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ConfigError(f"loss weights must be non-negative, got {self}")


class ClampCounter:
    """Counts gold probabilities that hit the 1e-12 clamp inside a loss."""

    def __init__(self):
        self.hits = 0

    def count(self, picked: np.ndarray):
        self.hits += int((picked < PROB_CLAMP).sum())


def _stack_dists(dists) -> Tensor:
    if isinstance(dists, Tensor):
        return dists
    dists = list(dists)
    if not dists:
        raise ContractError("empty batch of distributions")
    rows = [reshape(d, (1, d.data.shape[-1])) for d in dists]
    return concat(rows, axis=0) if len(rows) > 1 else rows[0]


def task_loss(pred_dists, gold_labels, clamp_counter: ClampCounter | None = None) -> Tensor:
    """Summed negative log-likelihood of the gold labels.

    pred_dists: an (N, K) tensor or a sequence of K-vector distributions.
    Gold probabilities below 1e-12 are clamped (and counted) so a
    collapsed prediction cannot produce an infinite loss.
    """
    stacked = _stack_dists(pred_dists)
    gold = np.asarray(gold_labels, dtype=np.intp)
    if gold.shape != (stacked.data.shape[0],):
        raise ContractError(
            f"{stacked.data.shape[0]} distributions but {gold.shape} labels"
        )
    if gold.size and (gold.min() < 0 or gold.max() >= stacked.data.shape[1]):
        raise ContractError("gold label index out of range")
    if clamp_counter is not None:
        picked = stacked.data[np.arange(gold.size), gold]
        clamp_counter.count(picked)
    return cross_entropy(stacked, gold, clamp=PROB_CLAMP)


def adv_loss(task_dists, task_ids, clamp_counter: ClampCounter | None = None) -> Tensor:
    """Cross-entropy of the (reversal-fed) discriminator vs true task ids."""
    return task_loss(task_dists, task_ids, clamp_counter)


def diff_loss(private, shared) -> Tensor:
    """Squared Frobenius norm of private^T @ shared, per sentence, averaged
    over the batch.  Accepts a single (n, d) pair or two parallel lists."""
    if isinstance(private, Tensor):
        private, shared = [private], [shared]
    private, shared = list(private), list(shared)
    if len(private) != len(shared) or not private:
        raise ContractError("diff_loss needs matching non-empty private/shared batches")
    total = None
    for p, s in zip(private, shared):
        if p.data.shape != s.data.shape:
            raise ContractError(
                f"private/shared shape mismatch: {p.data.shape} vs {s.data.shape}"
            )
        term = frobenius_sq(matmul(transpose(p), s))
        total = term if total is None else add(total, term)
    return scale(total, 1.0 / len(private))


def total_loss(task: Tensor, adv: Tensor, dif: Tensor, weights: LossWeights) -> Tensor:
    """L = L_task + lam * L_adv + beta * L_dif."""
    for name, t in (("task", task), ("adv", adv), ("dif", dif)):
        if not np.isfinite(t.data).all():
            raise DivergenceError(f"non-finite {name} loss term")
    return add(add(task, scale(adv, weights.lam)), scale(dif, weights.beta))
