"""Binary checkpoint persistence.

Layout (little-endian throughout):
    8-byte magic "AGNRMCK1"
    u32 format version
    u32 length + utf-8 fingerprint (sha256 hex of arch config + vocabs)
    u32 length + utf-8 canonical JSON metadata (config, vocab token lists,
        epoch info)
    u32 record count, then per parameter:
        u32 length + utf-8 name
        u32 ndim, u32 dims...
        raw float32 values
        u8 optimizer flag; if set: u64 step count, float32 m, float32 v

Parameters round-trip bitwise; models in float64 verification mode are
not checkpointable (the format stores 32-bit values).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct

import numpy as np

from .embeddings import RESERVED, Vocabulary
from .errors import (
    CheckpointError,
    CheckpointFingerprintError,
    CheckpointIntegrityError,
    CheckpointVersionError,
)
from .model import JointModel, ModelConfig
from .optim import Adam

MAGIC = b"AGNRMCK1"
VERSION = 1

_ARCH_FIELDS = (
    "d_word", "d_char", "d_sbw", "filter_width", "d_pe", "d_model", "n_heads",
    "layers_shared", "layers_ald", "layers_tn", "layers_dec", "d_lstm",
    "max_len", "dropout", "labels", "precision", "seed",
)


def _arch_dict(config: ModelConfig) -> dict:
    d = {k: getattr(config, k) for k in _ARCH_FIELDS}
    d["labels"] = list(d["labels"])
    return d


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def fingerprint(model: JointModel) -> str:
    """Architecture + vocabulary digest; parameters are not included."""
    payload = _canonical(
        {
            "arch": _arch_dict(model.config),
            "words": model.word_vocab.tokens(),
            "chars": model.char_vocab.tokens(),
            "targets": model.target_vocab.tokens(),
        }
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _write_block(fh, data: bytes):
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def save_checkpoint(model: JointModel, path, optimizer: Adam | None = None,
                    meta: dict | None = None):
    if model.config.dtype != np.float32:
        raise CheckpointError("only float32 training-mode models are checkpointable")
    body = io.BytesIO()
    body.write(MAGIC)
    body.write(struct.pack("<I", VERSION))
    _write_block(body, fingerprint(model).encode("utf-8"))
    meta_obj = {
        "arch": _arch_dict(model.config),
        "words": model.word_vocab.tokens(),
        "chars": model.char_vocab.tokens(),
        "targets": model.target_vocab.tokens(),
        "meta": dict(sorted((meta or {}).items())),
    }
    _write_block(body, _canonical(meta_obj).encode("utf-8"))
    params = model.named_parameters()
    body.write(struct.pack("<I", len(params)))
    for name, p in params:
        _write_block(body, name.encode("utf-8"))
        body.write(struct.pack("<I", p.data.ndim))
        for dim in p.data.shape:
            body.write(struct.pack("<I", dim))
        body.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
        if optimizer is not None:
            st = optimizer.state_for(p)
            body.write(struct.pack("<B", 1))
            body.write(struct.pack("<Q", st.t))
            body.write(np.ascontiguousarray(st.m, dtype="<f4").tobytes())
            body.write(np.ascontiguousarray(st.v, dtype="<f4").tobytes())
        else:
            body.write(struct.pack("<B", 0))
    with open(path, "wb") as fh:
        fh.write(body.getvalue())


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointIntegrityError(f"{self.path}: truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def block(self) -> bytes:
        return self.take(self.u32())

    def done(self) -> bool:
        return self.pos == len(self.data)


def _vocab_from_tokens(tokens) -> Vocabulary:
    if tuple(tokens[: len(RESERVED)]) != RESERVED:
        raise CheckpointIntegrityError("vocabulary in checkpoint lacks reserved prefix")
    return Vocabulary(tokens[len(RESERVED):])


def load_checkpoint(path, expected_fingerprint: str | None = None, force: bool = False,
                    with_optimizer: bool = False):
    """Rebuild the model (and optionally its optimizer) from a checkpoint.

    Returns (model, optimizer_or_None, meta).  The stored fingerprint is
    always re-derived and verified; `expected_fingerprint`, when given,
    must match too unless `force` is set.
    """
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), path)
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointIntegrityError(f"{path}: bad magic, not a checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported version {version}")
    stored_fp = r.block().decode("utf-8")
    try:
        meta_obj = json.loads(r.block().decode("utf-8"))
        config = ModelConfig(
            **{**meta_obj["arch"], "labels": tuple(meta_obj["arch"]["labels"])}
        )
        model = JointModel(
            config,
            _vocab_from_tokens(meta_obj["words"]),
            _vocab_from_tokens(meta_obj["chars"]),
            _vocab_from_tokens(meta_obj["targets"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointIntegrityError(f"{path}: bad metadata ({exc})") from exc
    derived = fingerprint(model)
    if derived != stored_fp and not force:
        raise CheckpointFingerprintError(
            f"{path}: fingerprint mismatch (stored {stored_fp[:12]}..,"
            f" derived {derived[:12]}..)"
        )
    if expected_fingerprint is not None and expected_fingerprint != stored_fp and not force:
        raise CheckpointFingerprintError(
            f"{path}: checkpoint does not match the requested configuration"
        )
    n_records = r.u32()
    by_name = dict(model.named_parameters())
    if n_records != len(by_name):
        raise CheckpointIntegrityError(
            f"{path}: {n_records} records for {len(by_name)} parameters"
        )
    optimizer = Adam(model.parameters()) if with_optimizer else None
    for _ in range(n_records):
        name = r.block().decode("utf-8")
        p = by_name.get(name)
        if p is None:
            raise CheckpointIntegrityError(f"{path}: unknown parameter {name!r}")
        ndim = r.u32()
        shape = tuple(r.u32() for _ in range(ndim))
        if shape != p.data.shape:
            raise CheckpointIntegrityError(
                f"{path}: {name} has shape {shape}, expected {p.data.shape}"
            )
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        values = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        p.data = values.astype(np.float32, copy=True)
        if r.u8():
            t = r.u64()
            m = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
            v = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
            if optimizer is not None:
                st = optimizer.state_for(p)
                st.t = t
                st.m = m.astype(np.float32, copy=True)
                st.v = v.astype(np.float32, copy=True)
    if not r.done():
        raise CheckpointIntegrityError(f"{path}: trailing bytes after records")
    return model, optimizer, meta_obj["meta"]
