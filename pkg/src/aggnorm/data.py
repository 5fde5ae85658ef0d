"""Corpus containers, TAB-format parsers, slang augmentation, and the
deterministic synthetic world used for desk-scale experiments.

All files are UTF-8 with TAB (0x09) as the only field separator.
Parsers reject malformed input (naming the line) rather than repairing it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .embeddings import tokenize
from .errors import ConfigError, DataError


@dataclass
class ClassificationCorpus:
    """Labeled sentences for aggression detection."""

    instances: list  # (label, tokens) pairs
    labels: tuple
    n_truncated: int = 0

    def __post_init__(self):
        for label, tokens in self.instances:
            if label not in self.labels:
                raise DataError(f"label {label!r} not in inventory {self.labels}")
            if not tokens:
                raise DataError("empty token sequence in classification corpus")

    def __len__(self):
        return len(self.instances)


@dataclass
class NormalizationCorpus:
    """(raw tokens, normalized tokens) pairs; sides may differ in length."""

    pairs: list
    n_truncated: int = 0

    def __post_init__(self):
        for raw, norm in self.pairs:
            if not raw or not norm:
                raise DataError("empty side in normalization pair")

    def __len__(self):
        return len(self.pairs)


def _truncate(tokens, max_len):
    if max_len is not None and len(tokens) > max_len:
        return tokens[:max_len], 1
    return tokens, 0


def load_classification(path, labels=None, max_len=None) -> ClassificationCorpus:
    """Parse `label<TAB>text` lines; text is tokenized, blank lines skipped."""
    instances = []
    seen = []
    truncated = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected label<TAB>text")
            label, text = line.split("\t", 1)
            if labels is not None and label not in labels:
                raise DataError(f"{path}:{lineno}: unknown label {label!r}")
            tokens = tokenize(text)
            if not tokens:
                raise DataError(f"{path}:{lineno}: no tokens after tokenization")
            tokens, t = _truncate(tokens, max_len)
            truncated += t
            if label not in seen:
                seen.append(label)
            instances.append((label, tokens))
    inventory = tuple(labels) if labels is not None else tuple(seen)
    return ClassificationCorpus(instances, inventory, n_truncated=truncated)


def save_classification(corpus: ClassificationCorpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for label, tokens in corpus.instances:
            fh.write(f"{label}\t{' '.join(tokens)}\n")


def load_normalization(path, max_len=None) -> NormalizationCorpus:
    """Parse `raw tokens<TAB>normalized tokens` lines (space-separated)."""
    pairs = []
    truncated = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected raw<TAB>normalized")
            raw_text, norm_text = line.split("\t", 1)
            raw = raw_text.split()
            norm = norm_text.split()
            if not raw or not norm:
                raise DataError(f"{path}:{lineno}: empty side in pair")
            raw, t1 = _truncate(raw, max_len)
            norm, t2 = _truncate(norm, max_len)
            truncated += 1 if (t1 or t2) else 0
            pairs.append((raw, norm))
    return NormalizationCorpus(pairs, n_truncated=truncated)


def save_normalization(corpus: NormalizationCorpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for raw, norm in corpus.pairs:
            fh.write(f"{' '.join(raw)}\t{' '.join(norm)}\n")


def load_slang(path) -> dict:
    """Parse `slang<TAB>expansion` lines into an ordered mapping."""
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{lineno}: expected slang<TAB>expansion")
            key, expansion = line.split("\t", 1)
            key = key.strip()
            expansion_tokens = expansion.split()
            if not key or not expansion_tokens:
                raise DataError(f"{path}:{lineno}: empty slang or expansion")
            mapping[key] = expansion_tokens
    return mapping


def save_slang(mapping: dict, path):
    with open(path, "w", encoding="utf-8") as fh:
        for key, expansion in mapping.items():
            exp = expansion if isinstance(expansion, str) else " ".join(expansion)
            fh.write(f"{key}\t{exp}\n")


def augment_with_slang(corpus: ClassificationCorpus, slang: dict) -> NormalizationCorpus:
    """Mine extra normalization pairs from classification sentences.

    Every sentence containing at least one slang key yields the pair
    (original tokens, tokens with every key replaced by its expansion).
    """
    pairs = []
    for _label, tokens in corpus.instances:
        if not any(t in slang for t in tokens):
            continue
        normalized = []
        for t in tokens:
            if t in slang:
                exp = slang[t]
                normalized.extend([exp] if isinstance(exp, str) else exp)
            else:
                normalized.append(t)
        pairs.append((list(tokens), normalized))
    return NormalizationCorpus(pairs)


# ---------------------------------------------------------------------------
# Synthetic world


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of the generated corpora.

    The two tasks share filler and cue vocabulary; each task appends its
    own marker token, so an unregularized discriminator can tell them
    apart.  Corruptions are word-level misspellings that the TN side
    learns to undo; with `hide_cues` the ALD dev/test cues appear only in
    a corruption variant never seen in ALD training (but covered by TN).
    """

    n_classes: int = 3
    labels: tuple = ("OAG", "CAG", "NAG")
    ald_train: int = 60
    ald_dev: int = 24
    ald_test: int = 24
    tn_train: int = 100
    tn_dev: int = 30
    tn_test: int = 30
    n_fillers: int = 18
    cues_per_class: int = 3
    n_corrupt_fillers: int = 8
    corrupt_variants: int = 1
    min_fillers: int = 3
    max_fillers: int = 6
    ald_corrupt_prob: float = 0.0
    tn_corrupt_prob: float = 0.7
    tn_cue_prob: float = 0.7
    hide_cues: bool = False
    markers: bool = True

    def __post_init__(self):
        if self.n_classes < 1:
            raise ConfigError("synthetic spec needs at least one class")
        if self.n_classes > len(self.labels):
            raise ConfigError(f"{self.n_classes} classes but {len(self.labels)} labels")
        if self.hide_cues and self.corrupt_variants < 2:
            raise ConfigError("hide_cues needs at least two corruption variants")


@dataclass
class SyntheticWorld:
    spec: SyntheticSpec
    ald_train: ClassificationCorpus
    ald_dev: ClassificationCorpus
    ald_test: ClassificationCorpus
    tn_train: NormalizationCorpus
    tn_dev: NormalizationCorpus
    tn_test: NormalizationCorpus
    corruption: dict = field(default_factory=dict)  # corrupt form -> clean form


def _variant(word: str, v: int) -> str:
    # clean words never contain 'x', so variants cannot collide with them
    return word + "x" * (v + 1)


# only ALD sentences carry the marker; TN sentences end with a plain
# never-corrupted filler instead, so the marker row is the one signal a
# task discriminator can use and no task objective depends on it; its
# characters appear in no other token, leaving its whole input pathway
# free of task gradients
ALD_MARKER = "qzj"


def build_world(seed: int, spec: SyntheticSpec = SyntheticSpec()) -> SyntheticWorld:
    """Deterministically generate coordinated corpora for both tasks."""
    rng = np.random.default_rng(seed)
    labels = spec.labels[: spec.n_classes]
    fillers = [f"w{i}" for i in range(spec.n_fillers)]
    cues = {
        k: [f"cue{k}{j}" for j in range(spec.cues_per_class)]
        for k in range(spec.n_classes)
    }
    corruptible = [c for k in cues for c in cues[k]]
    corruptible += fillers[: spec.n_corrupt_fillers]
    corruption = {}
    for w in corruptible:
        for v in range(spec.corrupt_variants):
            corruption[_variant(w, v)] = w
    train_variants = list(range(spec.corrupt_variants))
    eval_variants = train_variants
    if spec.hide_cues:
        train_variants = train_variants[:-1]
        eval_variants = [spec.corrupt_variants - 1]

    corruptible_set = set(corruptible)

    def clean_sentence(cue_class):
        """Fillers plus at most one cue; both tasks draw from this shape,
        so markers stay the only systematic difference between them."""
        n = int(rng.integers(spec.min_fillers, spec.max_fillers + 1))
        tokens = [fillers[int(i)] for i in rng.integers(0, len(fillers), n)]
        if cue_class is not None:
            cue = cues[cue_class][int(rng.integers(0, spec.cues_per_class))]
            tokens.insert(int(rng.integers(0, len(tokens) + 1)), cue)
        return tokens

    def corrupt_tokens(tokens, prob, variants):
        out = []
        for w in tokens:
            if w in corruptible_set and rng.random() < prob:
                out.append(_variant(w, int(rng.choice(variants))))
            else:
                out.append(w)
        return out

    safe_fillers = fillers[spec.n_corrupt_fillers :]

    def ald_corpus(size, variants):
        instances = []
        for i in range(size):
            k = i % spec.n_classes
            tokens = corrupt_tokens(clean_sentence(k), spec.ald_corrupt_prob, variants)
            if spec.markers:
                tokens.append(ALD_MARKER)
            instances.append((labels[k], tokens))
        return ClassificationCorpus(instances, labels)

    def tn_pair():
        cue_class = (
            int(rng.integers(0, spec.n_classes))
            if rng.random() < spec.tn_cue_prob else None
        )
        clean = clean_sentence(cue_class)
        raw = corrupt_tokens(clean, spec.tn_corrupt_prob,
                             list(range(spec.corrupt_variants)))
        if spec.markers:
            # length-match the ALD marker with a clean copy-through filler
            tail = safe_fillers[int(rng.integers(0, len(safe_fillers)))]
            raw = raw + [tail]
            clean = clean + [tail]
        return raw, clean

    def tn_corpus(size):
        return NormalizationCorpus([tn_pair() for _ in range(size)])

    return SyntheticWorld(
        spec=spec,
        ald_train=ald_corpus(spec.ald_train, train_variants),
        ald_dev=ald_corpus(spec.ald_dev, eval_variants),
        ald_test=ald_corpus(spec.ald_test, eval_variants),
        tn_train=tn_corpus(spec.tn_train),
        tn_dev=tn_corpus(spec.tn_dev),
        tn_test=tn_corpus(spec.tn_test),
        corruption=corruption,
    )


def generate_synthetic(seed: int, spec: SyntheticSpec = SyntheticSpec()):
    """Training-split corpora for both tasks (see build_world for all splits)."""
    world = build_world(seed, spec)
    return world.ald_train, world.tn_train
