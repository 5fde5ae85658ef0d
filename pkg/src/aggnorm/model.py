"""Assembly of the full shared-private multi-task model.

One embedding pathway feeds three encoder stacks (shared, ALD-private,
TN-private); the classifier and normalizer heads consume the shared +
private concatenation for their task, and the discriminator sees only
the shared features.  The three stacks share no parameter storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .decoders import ClassifierHead, NormalizerDecoder
from .discriminator import TaskDiscriminator
from .embeddings import EmbeddingTables, Vocabulary, encode_tokens
from .encoders import ROLE_ALD, ROLE_SHARED, ROLE_TN, AttentionRecord, EncoderStack
from .errors import ConfigError
from .layers import Runtime
from .tensor import Tensor, concat

TASK_ALD = "ald"
TASK_TN = "tn"


@dataclass(frozen=True)
class ModelConfig:
    d_word: int = 64
    d_char: int = 16
    d_sbw: int = 32
    filter_width: int = 3
    d_pe: int = 16
    d_model: int = 64
    n_heads: int = 4
    layers_shared: int = 2
    layers_ald: int = 2
    layers_tn: int = 3
    layers_dec: int = 3
    d_lstm: int = 32
    max_len: int = 64
    dropout: float = 0.4
    labels: tuple = ("OAG", "CAG", "NAG")
    precision: str = "float32"
    seed: int = 13

    def __post_init__(self):
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.d_model % self.n_heads:
            raise ConfigError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def tiny(self, **overrides) -> "ModelConfig":
        """Verification-scale variant used by gradient checks."""
        small = dict(
            d_word=6, d_char=4, d_sbw=5, filter_width=3, d_pe=3, d_model=8,
            n_heads=2, layers_shared=1, layers_ald=2, layers_tn=2, layers_dec=2,
            d_lstm=4, max_len=16, dropout=0.0, precision="float64",
        )
        small.update(overrides)
        return replace(self, **small)


@dataclass
class EncodedSentence:
    """A tokenized sentence mapped to ids, ready for the embedding layer."""

    tokens: list
    token_ids: np.ndarray
    char_ids: list = field(repr=False)


class JointModel:
    def __init__(self, config: ModelConfig, word_vocab: Vocabulary,
                 char_vocab: Vocabulary, target_vocab: Vocabulary):
        self.config = config
        self.word_vocab = word_vocab
        self.char_vocab = char_vocab
        self.target_vocab = target_vocab
        dtype = config.dtype
        rng = np.random.default_rng(config.seed)
        self.embeddings = EmbeddingTables(
            len(word_vocab), len(char_vocab), config.d_word, config.d_char,
            config.d_sbw, config.filter_width, config.d_pe, config.max_len,
            rng, dtype,
        )
        d_in = self.embeddings.d_in
        self.enc_shared = EncoderStack(
            ROLE_SHARED, d_in, config.d_model, config.n_heads,
            config.layers_shared, config.max_len, rng, dtype,
        )
        self.enc_ald = EncoderStack(
            ROLE_ALD, d_in, config.d_model, config.n_heads,
            config.layers_ald, config.max_len, rng, dtype,
        )
        self.enc_tn = EncoderStack(
            ROLE_TN, d_in, config.d_model, config.n_heads,
            config.layers_tn, config.max_len, rng, dtype,
        )
        self.classifier = ClassifierHead(
            config.d_model, config.d_lstm, len(config.labels), rng, dtype
        )
        self.decoder = NormalizerDecoder(
            len(target_vocab), config.d_model, 2 * config.d_model, config.n_heads,
            config.layers_dec, config.max_len, rng, dtype,
        )
        self.discr = TaskDiscriminator(config.d_model, config.d_lstm, rng, dtype)
        self.training = False
        self.dropout_rng = np.random.default_rng([config.seed, 0xD0])
        self._params = (
            self.embeddings.parameters()
            + self.enc_shared.parameters()
            + self.enc_ald.parameters()
            + self.enc_tn.parameters()
            + self.classifier.parameters()
            + self.decoder.parameters()
            + self.discr.parameters()
        )
        names = [p.name for p in self._params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names in model assembly")
        self._by_name = {p.name: p for p in self._params}

    # -- mode & registry ----------------------------------------------------

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def runtime(self) -> Runtime:
        return Runtime(self.config.dropout, self.dropout_rng, self.training)

    def parameters(self):
        return list(self._params)

    def param(self, name: str):
        return self._by_name[name]

    def named_parameters(self):
        return [(p.name, p) for p in self._params]

    def ald_side_parameters(self):
        return self.enc_ald.parameters() + self.classifier.parameters()

    def tn_side_parameters(self):
        return self.enc_tn.parameters() + self.decoder.parameters()

    def shared_path_parameters(self):
        return self.embeddings.parameters() + self.enc_shared.parameters()

    def zero_grad(self):
        for p in self._params:
            p.grad = None

    def snapshot(self) -> dict:
        return {p.name: p.data.copy() for p in self._params}

    def restore(self, snap: dict):
        for p in self._params:
            p.data = snap[p.name].copy()

    # -- forward paths ------------------------------------------------------

    def encode_sentence(self, sent: EncodedSentence) -> EncodedSentence:
        return sent

    def prepare(self, tokens) -> EncodedSentence:
        ids, chars = encode_tokens(tokens, self.word_vocab, self.char_vocab)
        return EncodedSentence(list(tokens), ids, chars)

    def encode(self, task: str, sent: EncodedSentence, mask=None, records=None):
        """Run embeddings + shared and task-private stacks.

        records, when given, is a dict receiving AttentionRecord objects
        keyed by encoder role.  Returns (shared, private) feature tensors.
        """
        rt = self.runtime()
        x = self.embeddings.embed_sequence(sent.token_ids, sent.char_ids)
        stack = self.enc_ald if task == TASK_ALD else self.enc_tn
        rec_s = rec_p = None
        if records is not None:
            rec_s = AttentionRecord(ROLE_SHARED, sent.tokens)
            rec_p = AttentionRecord(stack.role, sent.tokens)
            records[ROLE_SHARED] = rec_s
            records[stack.role] = rec_p
        shared = self.enc_shared.encode(x, mask, rt, record=rec_s)
        private = stack.encode(x, mask, rt, record=rec_p)
        return shared, private

    def encode_shared(self, sent: EncodedSentence, mask=None) -> Tensor:
        """Shared-encoder features only (task-independent by construction)."""
        x = self.embeddings.embed_sequence(sent.token_ids, sent.char_ids)
        return self.enc_shared.encode(x, mask, self.runtime())

    def classify_sentence(self, sent: EncodedSentence, mask=None, records=None) -> Tensor:
        shared, private = self.encode(TASK_ALD, sent, mask, records)
        return self.classifier.classify(shared, private, mask)

    def tn_memory(self, shared: Tensor, private: Tensor) -> Tensor:
        return concat([shared, private], axis=1)

    def tn_loss_sentence(self, sent: EncodedSentence, target_ids, mask=None,
                         clamp_counter=None) -> Tensor:
        shared, private = self.encode(TASK_TN, sent, mask)
        memory = self.tn_memory(shared, private)
        return self.decoder.loss(memory, mask, target_ids, self.runtime(),
                                 clamp_counter=clamp_counter)

    def tn_decode_sentence(self, sent: EncodedSentence, max_len=None, mask=None,
                           trace=None):
        shared, private = self.encode(TASK_TN, sent, mask)
        memory = self.tn_memory(shared, private)
        limit = max_len if max_len is not None else self.config.max_len - 1
        return self.decoder.greedy_decode(memory, mask, limit, self.runtime(), trace=trace)

    def target_tokens(self, ids) -> list:
        return [self.target_vocab.token_of(i) for i in ids]
