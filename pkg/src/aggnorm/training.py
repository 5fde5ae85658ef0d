"""Turn-taking adversarial training with TN warm start and early stopping.

Phase 1 pre-trains the normalization branch alone until its dev loss
plateaus; phase 2 strictly alternates one TN mini-batch turn with one ALD
mini-batch turn, each optimizing task + lam*adversarial + beta*orthogonality
for the active task.  Only parameters that received gradients in a turn
are stepped, so the inactive task's private branch stays bitwise frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import ClassificationCorpus, NormalizationCorpus
from .discriminator import TASK_ALD as TASK_ID_ALD
from .discriminator import TASK_TN as TASK_ID_TN
from .embeddings import BOS, EOS
from .errors import ConfigError, ContractError, DivergenceError
from .losses import ClampCounter, adv_loss, diff_loss, task_loss
from .metrics import classification_scores, normalization_scores, token_accuracy
from .model import TASK_ALD, TASK_TN, EncodedSentence, JointModel
from .optim import Adam, clip_global_norm
from .tensor import Tape, add, backward, grad_reverse, scale, scale_grad

MODES = ("joint", "ald_only", "tn_only")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5e-4
    batch_tn: int = 32
    batch_ald: int = 16
    lam: float = 0.05
    beta: float = 0.01
    clip_norm: float = 5.0
    max_epochs: int = 30
    patience: int = 5
    warm_start: bool = True
    warm_max_epochs: int = 20
    warm_rel_improvement: float = 0.01
    warm_window: int = 2
    adv_inner_steps: int = 0
    mode: str = "joint"
    seed: int = 13
    # grid ranges honored by external sweeps, not by a single run
    lr_grid: tuple = (1e-3, 1e-4)
    lam_range: tuple = (0.01, 0.1)
    beta_range: tuple = (0.01, 0.1)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown training mode {self.mode!r}")
        for name in ("lr", "clip_norm", "max_epochs", "patience", "warm_max_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.batch_tn < 1 or self.batch_ald < 1:
            raise ConfigError("batch sizes must be >= 1")
        if self.lam < 0 or self.beta < 0:
            raise ConfigError("lam and beta must be non-negative")


_EPOCH_KEYS = (
    "epoch", "phase", "tn_loss", "ald_loss", "adv_loss", "dif_loss", "disc_acc",
    "dev_p", "dev_r", "dev_f1", "dev_tn_f1", "dev_tn_loss",
)


@dataclass
class EpochRecord:
    epoch: int
    phase: str
    tn_loss: float = float("nan")
    ald_loss: float = float("nan")
    adv_loss: float = float("nan")
    dif_loss: float = float("nan")
    disc_acc: float = float("nan")
    dev_p: float = float("nan")
    dev_r: float = float("nan")
    dev_f1: float = float("nan")
    dev_tn_f1: float = float("nan")
    dev_tn_loss: float = float("nan")

    def line(self) -> str:
        parts = []
        for key in _EPOCH_KEYS:
            value = getattr(self, key)
            parts.append(f"{key}={value}" if isinstance(value, str)
                         else f"{key}={value:.6f}" if key != "epoch"
                         else f"{key}={value}")
        return "\t".join(parts)


@dataclass
class MetricsReport:
    records: list = field(default_factory=list)
    turn_log: list = field(default_factory=list)  # one list of task tags per epoch
    clamp_hits: int = 0
    summary: dict = field(default_factory=dict)

    def lines(self) -> list:
        out = [r.line() for r in self.records]
        summary = "\t".join(f"{k}={v}" for k, v in sorted(self.summary.items()))
        out.append(f"summary\t{summary}")
        return out

    def last(self) -> EpochRecord:
        return self.records[-1]


@dataclass
class TNInstance:
    sent: EncodedSentence
    target_ids: list
    raw_tokens: list
    gold_tokens: list


@dataclass
class TrainData:
    ald_train: list
    ald_dev: list
    tn_train: list
    tn_dev: list

    @classmethod
    def build(cls, model: JointModel, ald_train: ClassificationCorpus,
              ald_dev: ClassificationCorpus, tn_train: NormalizationCorpus,
              tn_dev: NormalizationCorpus) -> "TrainData":
        return cls(
            encode_classification(model, ald_train),
            encode_classification(model, ald_dev),
            encode_normalization(model, tn_train),
            encode_normalization(model, tn_dev),
        )


def encode_classification(model: JointModel, corpus: ClassificationCorpus):
    label_index = {label: i for i, label in enumerate(model.config.labels)}
    out = []
    for label, tokens in corpus.instances:
        if label not in label_index:
            raise ContractError(f"label {label!r} unknown to the model")
        out.append((model.prepare(tokens[: model.config.max_len]), label_index[label]))
    return out


def encode_normalization(model: JointModel, corpus: NormalizationCorpus):
    limit = model.config.max_len
    out = []
    for raw, norm in corpus.pairs:
        sent = model.prepare(raw[:limit])
        inner = [model.target_vocab.id_of(t) for t in norm[: limit - 1]]
        out.append(TNInstance(sent, [BOS] + inner + [EOS], list(raw), list(norm)))
    return out


def holdout_split(corpus, fraction: float, seed: int):
    """Seeded random split used when a dataset ships without a dev set."""
    if isinstance(corpus, ClassificationCorpus):
        items = corpus.instances
    else:
        items = corpus.pairs
    idx = np.random.default_rng([seed, 0x5EED]).permutation(len(items))
    n_dev = max(1, int(round(len(items) * fraction)))
    dev_set = set(idx[:n_dev].tolist())
    train_items = [it for i, it in enumerate(items) if i not in dev_set]
    dev_items = [it for i, it in enumerate(items) if i in dev_set]
    if isinstance(corpus, ClassificationCorpus):
        return (ClassificationCorpus(train_items, corpus.labels),
                ClassificationCorpus(dev_items, corpus.labels))
    return NormalizationCorpus(train_items), NormalizationCorpus(dev_items)


# ---------------------------------------------------------------------------
# Evaluation


def evaluate_classification(model: JointModel, encoded) -> "ClassificationScores":
    model.eval()
    labels = model.config.labels
    gold, pred = [], []
    for sent, label_idx in encoded:
        dist = model.classify_sentence(sent)
        gold.append(labels[label_idx])
        pred.append(labels[int(np.argmax(dist.data))])
    return classification_scores(gold, pred, labels)


def evaluate_normalization(model: JointModel, encoded):
    """Returns (edit P, edit R, edit F1, token accuracy, mean teacher loss)."""
    model.eval()
    raws, hyps, golds = [], [], []
    losses = []
    for inst in encoded:
        ids, _trunc = model.tn_decode_sentence(inst.sent)
        hyps.append(model.target_tokens(ids))
        raws.append(inst.raw_tokens)
        golds.append(inst.gold_tokens)
        losses.append(model.tn_loss_sentence(inst.sent, inst.target_ids).item())
    p, r, f1 = normalization_scores(raws, hyps, golds)
    acc = token_accuracy(hyps, golds)
    return p, r, f1, acc, float(np.mean(losses))


def evaluate(model: JointModel, corpus, task: str) -> dict:
    """Metric slice for a raw corpus: ALD P/R/weighted-F1 or TN edit F1."""
    if task == TASK_ALD:
        scores = evaluate_classification(model, encode_classification(model, corpus))
        return {
            "task": TASK_ALD,
            "precision": scores.weighted_precision,
            "recall": scores.weighted_recall,
            "weighted_f1": scores.weighted_f1,
            "accuracy": scores.accuracy,
            "per_label": {
                k: (v.precision, v.recall, v.f1, v.support)
                for k, v in scores.per_label.items()
            },
        }
    if task == TASK_TN:
        p, r, f1, acc, loss = evaluate_normalization(
            model, encode_normalization(model, corpus)
        )
        return {"task": TASK_TN, "precision": p, "recall": r, "f1": f1,
                "token_accuracy": acc, "loss": loss}
    raise ConfigError(f"unknown task {task!r}")


# ---------------------------------------------------------------------------
# Trainer


class Trainer:
    def __init__(self, model: JointModel, config: TrainConfig, data: TrainData):
        self.model = model
        self.config = config
        self.data = data
        self.optimizer = Adam(model.parameters(), lr=config.lr)
        self.report = MetricsReport()
        self.clamps = ClampCounter()
        self._disc_hits = 0
        self._disc_total = 0

    # -- batching ---------------------------------------------------------

    def _batches(self, items, size, rng):
        order = rng.permutation(len(items))
        return [
            [items[j] for j in order[i : i + size]]
            for i in range(0, len(order), size)
        ]

    # -- turns --------------------------------------------------------------

    def _step(self, tape, loss):
        if not np.isfinite(loss.data).all():
            raise DivergenceError("non-finite turn loss")
        backward(tape, loss)
        self.model.embeddings.zero_pad_row_grad()
        clip_global_norm(self.model.parameters(), self.config.clip_norm)
        self.optimizer.step()
        self.model.zero_grad()

    def _adversarial_input(self, shared):
        # the discriminator trains at full rate on its own loss; only the
        # lam-weighted, reversed gradient reaches the shared path, which
        # is the saddle point the joint objective asks for
        return scale_grad(grad_reverse(shared), self.config.lam)

    def _inner_saddle(self, sents, task_id):
        """Optional per-turn inner loop driving encoder and discriminator
        toward agreement: repeated adversarial-only single-pass steps, so
        the shared path chases the discriminator at full speed instead of
        competing with task gradients."""
        n = len(sents)
        for _ in range(self.config.adv_inner_steps):
            with Tape() as tape:
                dists = [
                    self.model.discr.discriminate(
                        self._adversarial_input(self.model.encode_shared(sent))
                    )
                    for sent in sents
                ]
                loss = scale(adv_loss(dists, [task_id] * n, self.clamps), 1.0 / n)
            self._step(tape, loss)

    def _compose(self, task, adv, dif):
        # task + full-rate adversarial CE (lam applied inside the
        # reversal) + beta-weighted orthogonality term
        return add(add(task, adv), scale(dif, self.config.beta))

    def _ald_turn(self, batch, adversarial: bool):
        self.model.train()
        n = len(batch)
        if adversarial and self.config.adv_inner_steps:
            self._inner_saddle([s for s, _l in batch], TASK_ID_ALD)
        with Tape() as tape:
            dists, shareds, privates, disc_dists = [], [], [], []
            for sent, _label in batch:
                shared, private = self.model.encode(TASK_ALD, sent)
                dists.append(self.model.classifier.classify(shared, private))
                if adversarial:
                    shareds.append(shared)
                    privates.append(private)
                    disc_dists.append(
                        self.model.discr.discriminate(self._adversarial_input(shared))
                    )
            labels = [label for _s, label in batch]
            task = scale(task_loss(dists, labels, self.clamps), 1.0 / n)
            if adversarial:
                adv = scale(
                    adv_loss(disc_dists, [TASK_ID_ALD] * n, self.clamps), 1.0 / n
                )
                dif = diff_loss(privates, shareds)
                loss = self._compose(task, adv, dif)
            else:
                adv = dif = None
                loss = task
        self._step(tape, loss)
        if adversarial:
            self._track_disc(disc_dists, TASK_ID_ALD)
        return (task.item(), adv.item() if adv is not None else 0.0,
                dif.item() if dif is not None else 0.0)

    def _tn_turn(self, batch, adversarial: bool):
        self.model.train()
        n = len(batch)
        if adversarial and self.config.adv_inner_steps:
            self._inner_saddle([inst.sent for inst in batch], TASK_ID_TN)
        with Tape() as tape:
            sent_losses, shareds, privates, disc_dists = [], [], [], []
            for inst in batch:
                shared, private = self.model.encode(TASK_TN, inst.sent)
                memory = self.model.tn_memory(shared, private)
                sent_losses.append(
                    self.model.decoder.loss(memory, None, inst.target_ids,
                                            self.model.runtime(), self.clamps)
                )
                if adversarial:
                    shareds.append(shared)
                    privates.append(private)
                    disc_dists.append(
                        self.model.discr.discriminate(self._adversarial_input(shared))
                    )
            acc = sent_losses[0]
            for extra in sent_losses[1:]:
                acc = acc + extra
            task = scale(acc, 1.0 / n)
            if adversarial:
                adv = scale(adv_loss(disc_dists, [TASK_ID_TN] * n, self.clamps), 1.0 / n)
                dif = diff_loss(privates, shareds)
                loss = self._compose(task, adv, dif)
            else:
                adv = dif = None
                loss = task
        self._step(tape, loss)
        if adversarial:
            self._track_disc(disc_dists, TASK_ID_TN)
        return (task.item(), adv.item() if adv is not None else 0.0,
                dif.item() if dif is not None else 0.0)

    def _track_disc(self, disc_dists, true_id):
        for d in disc_dists:
            self._disc_hits += int(np.argmax(d.data) == true_id)
            self._disc_total += 1

    # -- epoch metrics ------------------------------------------------------

    def _record_epoch(self, epoch, phase, tn_losses, ald_losses, adv_losses, dif_losses):
        rec = EpochRecord(epoch=epoch, phase=phase)
        if tn_losses:
            rec.tn_loss = float(np.mean(tn_losses))
        if ald_losses:
            rec.ald_loss = float(np.mean(ald_losses))
        if adv_losses:
            rec.adv_loss = float(np.mean(adv_losses))
        if dif_losses:
            rec.dif_loss = float(np.mean(dif_losses))
        if self._disc_total:
            rec.disc_acc = self._disc_hits / self._disc_total
        self._disc_hits = self._disc_total = 0
        if self.data.ald_dev:
            scores = evaluate_classification(self.model, self.data.ald_dev)
            rec.dev_p = scores.weighted_precision
            rec.dev_r = scores.weighted_recall
            rec.dev_f1 = scores.weighted_f1
        if self.data.tn_dev:
            _p, _r, f1, _acc, loss = evaluate_normalization(self.model, self.data.tn_dev)
            rec.dev_tn_f1 = f1
            rec.dev_tn_loss = loss
        self.report.records.append(rec)
        return rec

    # -- phases ---------------------------------------------------------

    def _warm_phase(self):
        cfg = self.config
        history = []
        for warm_epoch in range(cfg.warm_max_epochs):
            rng = np.random.default_rng([cfg.seed, 1, warm_epoch])
            tn_losses = []
            turns = []
            for batch in self._batches(self.data.tn_train, cfg.batch_tn, rng):
                t, _a, _d = self._tn_turn(batch, adversarial=False)
                tn_losses.append(t)
                turns.append(TASK_TN)
            self.report.turn_log.append(turns)
            rec = self._record_epoch(len(self.report.records), "warm",
                                     tn_losses, [], [], [])
            history.append(rec.dev_tn_loss if self.data.tn_dev else rec.tn_loss)
            if len(history) > cfg.warm_window:
                base = history[-1 - cfg.warm_window]
                if history[-1] > base * (1.0 - cfg.warm_rel_improvement):
                    break

    def _joint_epoch(self, epoch_idx):
        cfg = self.config
        mode = cfg.mode
        rng = np.random.default_rng([cfg.seed, 2, epoch_idx])
        tn_batches = (
            self._batches(self.data.tn_train, cfg.batch_tn, rng)
            if mode != "ald_only" else []
        )
        ald_batches = (
            self._batches(self.data.ald_train, cfg.batch_ald, rng)
            if mode != "tn_only" else []
        )
        adversarial = mode == "joint"
        tn_losses, ald_losses, adv_losses, dif_losses = [], [], [], []
        turns = []
        n_turn_pairs = max(len(tn_batches), len(ald_batches))
        for i in range(n_turn_pairs):
            if tn_batches:
                t, a, d = self._tn_turn(tn_batches[i % len(tn_batches)], adversarial)
                tn_losses.append(t)
                if adversarial:
                    adv_losses.append(a)
                    dif_losses.append(d)
                turns.append(TASK_TN)
            if ald_batches:
                t, a, d = self._ald_turn(ald_batches[i % len(ald_batches)], adversarial)
                ald_losses.append(t)
                if adversarial:
                    adv_losses.append(a)
                    dif_losses.append(d)
                turns.append(TASK_ALD)
        self.report.turn_log.append(turns)
        phase = "joint" if mode == "joint" else mode
        return self._record_epoch(len(self.report.records), phase,
                                  tn_losses, ald_losses, adv_losses, dif_losses)

    def _selection_metric(self, rec: EpochRecord) -> float:
        if self.config.mode == "tn_only":
            return rec.dev_tn_f1 if self.data.tn_dev else -rec.tn_loss
        return rec.dev_f1

    def run(self) -> MetricsReport:
        cfg = self.config
        started = time.time()
        try:
            if cfg.mode == "joint" and cfg.warm_start and self.data.tn_train:
                self._warm_phase()
            warm_epochs = len(self.report.records)
            best_metric = -float("inf")
            best_snapshot = self.model.snapshot()
            best_epoch = warm_epochs
            since_best = 0
            for epoch_idx in range(cfg.max_epochs):
                rec = self._joint_epoch(epoch_idx)
                metric = self._selection_metric(rec)
                if metric > best_metric:
                    best_metric = metric
                    best_snapshot = self.model.snapshot()
                    best_epoch = rec.epoch
                    since_best = 0
                else:
                    since_best += 1
                if since_best >= cfg.patience:
                    break
        except DivergenceError as exc:
            raise DivergenceError(str(exc), checkpoint=self.model.snapshot()) from exc
        self.model.restore(best_snapshot)
        self.report.clamp_hits = self.clamps.hits
        self.report.summary = {
            "best_epoch": best_epoch,
            "best_metric": round(best_metric, 6),
            "clamp_hits": self.clamps.hits,
            "mode": cfg.mode,
            "epochs_warm": warm_epochs,
            "epochs_main": len(self.report.records) - warm_epochs,
            "seconds": round(time.time() - started, 3),
        }
        return self.report


def train(model: JointModel, config: TrainConfig, data: TrainData):
    """Train in place; returns (model, MetricsReport)."""
    if config.mode != "tn_only" and not data.ald_train:
        raise ConfigError("ALD training requires a non-empty ALD corpus")
    if config.mode != "ald_only" and not data.tn_train:
        raise ConfigError("TN training requires a non-empty TN corpus")
    report = Trainer(model, config, data).run()
    return model, report
