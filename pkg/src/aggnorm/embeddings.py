"""Token/character vocabularies and the unified input representation.

Each input token t becomes concat(word_row(t), char_cnn(chars of t),
position_row(t)).  The word table stands in for a pre-trained contextual
encoder: a trainable lookup, with its padding row pinned to zero.
"""

from __future__ import annotations

import re

import numpy as np

from . import kernels
from .errors import ContractError, DataError, SequenceLengthError, VocabularyError
from .tensor import Parameter, Tensor, concat, make_op, reshape, rows, xavier_uniform

PAD, UNK, BOS, EOS = 0, 1, 2, 3
RESERVED = ("<pad>", "<unk>", "<bos>", "<eos>")

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace-plus-punctuation split."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """token <-> id mapping with ids 0..3 reserved for PAD/UNK/BOS/EOS."""

    def __init__(self, tokens=()):
        self._tokens = list(RESERVED)
        self._index = {t: i for i, t in enumerate(self._tokens)}
        for t in tokens:
            self.add(t)

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._tokens.append(token)
            self._index[token] = idx
        return idx

    @classmethod
    def from_corpus(cls, token_sequences) -> "Vocabulary":
        vocab = cls()
        for seq in token_sequences:
            for t in seq:
                vocab.add(t)
        return vocab

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self._tokens):
            raise VocabularyError(f"id {idx} out of range for vocabulary of {len(self)}")
        return self._tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self._tokens)

    def tokens(self) -> list[str]:
        """All tokens in id order, reserved entries included."""
        return list(self._tokens)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for t in self._tokens[len(RESERVED):]:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                token = line.rstrip("\n")
                if not token:
                    raise DataError(f"{path}:{lineno}: empty vocabulary line")
                if token in vocab:
                    raise DataError(f"{path}:{lineno}: duplicate token {token!r}")
                vocab.add(token)
        return vocab


def char_ids(token: str, char_vocab: Vocabulary) -> np.ndarray:
    if not token:
        raise ContractError("cannot take characters of an empty token")
    return np.asarray([char_vocab.id_of(ch) for ch in token], dtype=np.intp)


def encode_tokens(tokens, word_vocab: Vocabulary, char_vocab: Vocabulary):
    """Map a token sequence to (word ids, per-token char id arrays)."""
    ids = np.asarray([word_vocab.id_of(t) for t in tokens], dtype=np.intp)
    chars = [char_ids(t, char_vocab) for t in tokens]
    return ids, chars


class EmbeddingTables:
    """Word, character, char-CNN filter, and position parameters."""

    def __init__(self, n_words, n_chars, d_word, d_char, d_sbw, filter_width,
                 d_pe, max_len, rng, dtype):
        self.n_words = n_words
        self.n_chars = n_chars
        self.d_word = d_word
        self.d_sbw = d_sbw
        self.d_pe = d_pe
        self.max_len = max_len
        self.word = Parameter(
            xavier_uniform((n_words, d_word), n_words, d_word, rng, dtype), "embed.word"
        )
        self.word.data[PAD] = 0.0
        self.char = Parameter(
            xavier_uniform((n_chars, d_char), n_chars, d_char, rng, dtype), "embed.char"
        )
        self.filters = Parameter(
            xavier_uniform(
                (filter_width, d_char, d_sbw), filter_width * d_char, d_sbw, rng, dtype
            ),
            "embed.filters",
        )
        self.position = Parameter(
            xavier_uniform((max_len, d_pe), max_len, d_pe, rng, dtype), "embed.position"
        )

    @property
    def d_in(self) -> int:
        return self.d_word + self.d_sbw + self.d_pe

    def char_cnn(self, ids) -> Tensor:
        """Sub-word vector for one token: convolve its character
        embeddings with the filter bank and max-pool over time."""
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size == 0:
            raise ContractError("char_cnn over an empty character sequence")
        if ids.max() >= self.n_chars or ids.min() < 0:
            raise VocabularyError(
                f"character id out of range for table of {self.n_chars}"
            )
        emb = rows(self.char, ids)
        out, cache = kernels.charcnn_forward(emb.data, self.filters.data)

        def bwd(g):
            dchars, dfilters = kernels.charcnn_backward(np.ascontiguousarray(g), cache)
            return dchars, dfilters

        return make_op(out, (emb, self.filters), bwd)

    def position_embedding(self, t: int) -> Tensor:
        if not 0 <= t < self.max_len:
            raise SequenceLengthError(
                f"position {t} outside the table range [0, {self.max_len})"
            )
        return reshape(rows(self.position, [t]), (self.d_pe,))

    def embed_sequence(self, token_ids, char_id_seqs) -> Tensor:
        """Unified representation, one row per token: [word; subword; position]."""
        token_ids = np.asarray(token_ids, dtype=np.intp)
        n = token_ids.shape[0]
        if n == 0:
            raise ContractError("cannot embed an empty sequence")
        if n != len(char_id_seqs):
            raise ContractError(
                f"{n} tokens but {len(char_id_seqs)} character sequences"
            )
        if n > self.max_len:
            raise SequenceLengthError(f"sequence length {n} exceeds maximum {self.max_len}")
        if token_ids.max() >= self.n_words or token_ids.min() < 0:
            raise VocabularyError(f"token id out of range for vocabulary of {self.n_words}")
        word_part = rows(self.word, token_ids)
        sub_rows = [reshape(self.char_cnn(cids), (1, self.d_sbw)) for cids in char_id_seqs]
        sub_part = concat(sub_rows, axis=0) if len(sub_rows) > 1 else sub_rows[0]
        pos_part = rows(self.position, np.arange(n))
        return concat([word_part, sub_part, pos_part], axis=1)

    def zero_pad_row_grad(self):
        """Clear any gradient on the frozen PAD word row."""
        if self.word.grad is not None:
            self.word.grad[PAD] = 0.0

    def parameters(self):
        return [self.word, self.char, self.filters, self.position]
