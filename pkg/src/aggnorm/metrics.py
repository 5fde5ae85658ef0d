"""Evaluation metrics: per-label and support-weighted P/R/F1 for the
classifier, edit-level F1 and token accuracy for the normalizer.

Weighted scores average per-label values by gold support.  Because each
label's F1 lies between its own precision and recall but the weights mix
labels, the weighted F1 can land outside the interval spanned by the
weighted precision and recall.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class LabelScore:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationScores:
    per_label: dict = field(default_factory=dict)
    weighted_precision: float = 0.0
    weighted_recall: float = 0.0
    weighted_f1: float = 0.0
    accuracy: float = 0.0


def _prf(tp: int, fp: int, fn: int):
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def classification_scores(gold, pred, labels) -> ClassificationScores:
    """Per-label and support-weighted precision/recall/F1 plus accuracy.

    A label absent from both gold and predictions scores 0 with support 0
    and therefore contributes nothing to the weighted averages.
    """
    gold = list(gold)
    pred = list(pred)
    if len(gold) != len(pred):
        raise ValueError(f"{len(gold)} gold labels vs {len(pred)} predictions")
    out = ClassificationScores()
    n = len(gold)
    correct = sum(1 for g, p in zip(gold, pred) if g == p)
    out.accuracy = correct / n if n else 0.0
    for label in labels:
        tp = sum(1 for g, p in zip(gold, pred) if g == label and p == label)
        fp = sum(1 for g, p in zip(gold, pred) if g != label and p == label)
        fn = sum(1 for g, p in zip(gold, pred) if g == label and p != label)
        p, r, f1 = _prf(tp, fp, fn)
        support = tp + fn
        out.per_label[label] = LabelScore(p, r, f1, support)
        if n:
            w = support / n
            out.weighted_precision += w * p
            out.weighted_recall += w * r
            out.weighted_f1 += w * f1
    return out


def edit_set(raw, other) -> set:
    """(position, token) pairs where `other` differs from the raw input.

    Positions beyond the raw length count as edits (insertions)."""
    edits = set()
    for i, tok in enumerate(other):
        ref = raw[i] if i < len(raw) else None
        if tok != ref:
            edits.add((i, tok))
    return edits


def normalization_scores(raws, hyps, golds):
    """Corpus-level precision/recall/F1 over normalization edits.

    An edit is a (position, token) pair differing from the raw side; a
    hypothesis edit is correct when the gold side makes the same edit.
    """
    if not (len(raws) == len(hyps) == len(golds)):
        raise ValueError("raws, hyps and golds must be parallel")
    tp = n_hyp = n_gold = 0
    for raw, hyp, gold in zip(raws, hyps, golds):
        h = edit_set(raw, hyp)
        g = edit_set(raw, gold)
        tp += len(h & g)
        n_hyp += len(h)
        n_gold += len(g)
    p = tp / n_hyp if n_hyp else (1.0 if n_gold == 0 else 0.0)
    r = tp / n_gold if n_gold else (1.0 if n_hyp == 0 else 0.0)
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def token_accuracy(hyps, golds) -> float:
    """Fraction of positions where hypothesis and gold tokens agree,
    length mismatches counted against the longer side."""
    if len(hyps) != len(golds):
        raise ValueError("hyps and golds must be parallel")
    matches = total = 0
    for hyp, gold in zip(hyps, golds):
        total += max(len(hyp), len(gold))
        matches += sum(1 for h, g in zip(hyp, gold) if h == g)
    return matches / total if total else 1.0
