"""Finite-difference verification of the full model's gradients.

Builds one ALD and one TN objective over a fixed tiny batch (adversarial
term included without reversal, so the analytic gradient equals the true
derivative of the forward value) and compares every parameter's tape
gradient against central differences at 64-bit precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discriminator import TASK_ALD as TASK_ID_ALD
from .discriminator import TASK_TN as TASK_ID_TN
from .embeddings import BOS, EOS, Vocabulary
from .errors import ConfigError
from .losses import LossWeights, adv_loss, diff_loss, task_loss, total_loss
from .model import TASK_ALD, TASK_TN, JointModel, ModelConfig
from .tensor import Tape, backward, scale

DEFAULT_TOLERANCE = 1e-4
DEFAULT_H = 1e-5
ZERO_FLOOR = 1e-6  # entries where both gradients are below this are noise


@dataclass
class GroupResult:
    name: str
    checked: int
    max_rel_err: float


@dataclass
class GradCheckResult:
    groups: list
    tolerance: float

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance

    def failing(self):
        return [g for g in self.groups if g.max_rel_err >= self.tolerance]


def turn_objective(model: JointModel, ald_batch, tn_batch,
                   weights: LossWeights) -> "Tensor":
    """Sum of both tasks' full objectives on fixed batches (no reversal)."""
    terms = []
    if ald_batch:
        dists, shareds, privates, disc = [], [], [], []
        for sent, _label in ald_batch:
            s, p = model.encode(TASK_ALD, sent)
            dists.append(model.classifier.classify(s, p))
            disc.append(model.discr.discriminate(s, reverse=False))
            shareds.append(s)
            privates.append(p)
        n = len(ald_batch)
        terms.append(total_loss(
            scale(task_loss(dists, [label for _s, label in ald_batch]), 1.0 / n),
            scale(adv_loss(disc, [TASK_ID_ALD] * n), 1.0 / n),
            diff_loss(privates, shareds),
            weights,
        ))
    if tn_batch:
        losses, shareds, privates, disc = [], [], [], []
        for sent, target_ids in tn_batch:
            s, p = model.encode(TASK_TN, sent)
            memory = model.tn_memory(s, p)
            losses.append(model.decoder.loss(memory, None, target_ids, model.runtime()))
            disc.append(model.discr.discriminate(s, reverse=False))
            shareds.append(s)
            privates.append(p)
        n = len(tn_batch)
        acc = losses[0]
        for extra in losses[1:]:
            acc = acc + extra
        terms.append(total_loss(
            scale(acc, 1.0 / n),
            scale(adv_loss(disc, [TASK_ID_TN] * n), 1.0 / n),
            diff_loss(privates, shareds),
            weights,
        ))
    loss = terms[0]
    for t in terms[1:]:
        loss = loss + t
    return loss


def relative_error(a: float, f: float) -> float:
    denom = max(abs(a), abs(f))
    if denom < ZERO_FLOOR:
        return 0.0
    return abs(a - f) / denom


def check_model(model: JointModel, ald_batch, tn_batch,
                weights: LossWeights = LossWeights(),
                entries_per_param: int = 4, h: float = DEFAULT_H,
                tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
                exhaustive: bool = False) -> GradCheckResult:
    """Compare tape gradients against central finite differences.

    Checks `entries_per_param` seeded-random entries of every parameter
    (or all entries with `exhaustive`).  Reports one row per parameter
    group, every group exactly once.
    """
    if model.config.dtype != np.float64:
        raise ConfigError("gradient checks need a float64 (verification-mode) model")
    model.eval()  # dropout must not fire inside the closure

    with Tape() as tape:
        loss = turn_objective(model, ald_batch, tn_batch, weights)
    model.zero_grad()
    backward(tape, loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in model.named_parameters()
    }
    model.zero_grad()

    rng = np.random.default_rng(seed)
    groups = []
    for name, p in model.named_parameters():
        size = p.data.size
        if exhaustive or size <= entries_per_param:
            picks = np.arange(size)
        else:
            picks = rng.choice(size, size=entries_per_param, replace=False)
        flat = p.data.reshape(-1)
        worst = 0.0
        for k in picks:
            a = float(analytic[name].reshape(-1)[k])
            # a step that straddles a relu kink or a max-pool argmax switch
            # poisons the central difference; retry closer before failing
            err = None
            for h_try in (h, h * 0.1):
                orig = flat[k]
                flat[k] = orig + h_try
                up = turn_objective(model, ald_batch, tn_batch, weights).item()
                flat[k] = orig - h_try
                down = turn_objective(model, ald_batch, tn_batch, weights).item()
                flat[k] = orig
                fd = (up - down) / (2.0 * h_try)
                err = relative_error(a, fd)
                if err < tolerance:
                    break
            worst = max(worst, err)
        groups.append(GroupResult(name, len(picks), worst))
    return GradCheckResult(groups, tolerance)


def tiny_setup(seed: int = 0, config: ModelConfig | None = None):
    """A verification-scale model plus fixed 2+2 sentence batches."""
    cfg = config if config is not None else ModelConfig(seed=seed).tiny()
    if cfg.dtype != np.float64:
        raise ConfigError("tiny gradcheck setup must use float64 precision")
    word_list = ["the", "cat", "sat", "mat", "u", "r", "dog", "ran", "ok"]
    words = Vocabulary(word_list)
    chars = Vocabulary(sorted({ch for w in word_list for ch in w}))
    targets = Vocabulary(["the", "cat", "sat", "you", "are", "dog", "ok"])
    model = JointModel(cfg, words, chars, targets)

    def sent(tokens):
        return model.prepare(tokens)

    ald_batch = [
        (sent(["the", "cat", "sat", "the", "mat"]), 0),
        (sent(["u", "r", "dog", "ran", "ok"]), min(1, len(cfg.labels) - 1)),
    ]

    def wrapped(tokens):
        return [BOS] + [targets.id_of(t) for t in tokens] + [EOS]

    tn_batch = [
        (sent(["u", "r", "ok", "the", "cat"]), wrapped(["you", "are", "ok"])),
        (sent(["the", "dog", "ran", "u", "r"]), wrapped(["the", "dog", "ran"])),
    ]
    return model, ald_batch, tn_batch
