import numpy as np
import pytest

from aggnorm.checkpoint import fingerprint, load_checkpoint, save_checkpoint
from aggnorm.embeddings import Vocabulary
from aggnorm.errors import (
    CheckpointError,
    CheckpointFingerprintError,
    CheckpointIntegrityError,
    CheckpointVersionError,
)
from aggnorm.model import JointModel, ModelConfig
from aggnorm.optim import Adam


def small_model(seed=1, **overrides):
    cfg = ModelConfig(
        d_word=8, d_char=4, d_sbw=6, d_pe=4, d_model=8, n_heads=2,
        layers_shared=1, layers_ald=1, layers_tn=1, layers_dec=1,
        d_lstm=4, max_len=12, seed=seed, **overrides,
    )
    words = Vocabulary(["a", "b", "c", "u", "r"])
    chars = Vocabulary(list("abcur"))
    targets = Vocabulary(["a", "b", "you", "are"])
    return JointModel(cfg, words, chars, targets)


def eval_probe(model):
    sent = model.prepare(["a", "b", "u"])
    return model.classify_sentence(sent).data.copy()


def test_save_load_save_byte_identical(tmp_path):
    model = small_model()
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, p1, meta={"epoch": 3})
    loaded, _opt, meta = load_checkpoint(p1)
    assert meta == {"epoch": 3}
    save_checkpoint(loaded, p2, meta={"epoch": 3})
    assert p1.read_bytes() == p2.read_bytes()


def test_parameters_roundtrip_bitwise(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded, _, _ = load_checkpoint(path)
    for (name_a, pa), (name_b, pb) in zip(model.named_parameters(),
                                          loaded.named_parameters()):
        assert name_a == name_b
        assert np.array_equal(pa.data, pb.data)
        assert pa.data.dtype == pb.data.dtype


def test_eval_before_equals_eval_after_bitwise(tmp_path):
    model = small_model(seed=5)
    before = eval_probe(model)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    loaded, _, _ = load_checkpoint(path)
    after = eval_probe(loaded)
    assert np.array_equal(before, after)


def test_optimizer_state_roundtrip(tmp_path):
    model = small_model()
    opt = Adam(model.parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    for p in model.parameters():
        p.grad = rng.normal(size=p.data.shape).astype(np.float32)
    opt.step()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, optimizer=opt)
    loaded, opt2, _ = load_checkpoint(path, with_optimizer=True)
    for p, q in zip(model.parameters(), loaded.parameters()):
        sa, sb = opt.state_for(p), opt2.state_for(q)
        assert sa.t == sb.t == 1
        assert np.array_equal(sa.m, sb.m)
        assert np.array_equal(sa.v, sb.v)


def test_truncated_file_is_integrity_error(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    for cut in (8, len(blob) // 2, len(blob) - 3):
        (tmp_path / "t.ckpt").write_bytes(blob[:cut])
        with pytest.raises(CheckpointIntegrityError):
            load_checkpoint(tmp_path / "t.ckpt")


def test_trailing_garbage_rejected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    (tmp_path / "t.ckpt").write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(tmp_path / "t.ckpt")


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "nope.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
    with pytest.raises(CheckpointIntegrityError):
        load_checkpoint(path)


def test_version_mismatch_distinct_error(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    blob[8] = 99  # little-endian version field follows the magic
    (tmp_path / "v.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(tmp_path / "v.ckpt")


def test_fingerprint_mismatch_unless_forced(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    other = small_model(seed=9)
    with pytest.raises(CheckpointFingerprintError):
        load_checkpoint(path, expected_fingerprint=fingerprint(other))
    loaded, _, _ = load_checkpoint(path, expected_fingerprint=fingerprint(other),
                                   force=True)
    assert loaded is not None


def test_tampered_embedded_fingerprint_detected(tmp_path):
    model = small_model()
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = bytearray(path.read_bytes())
    # fingerprint block starts after magic + version + u32 length
    blob[16] = ord(b"f") if blob[16] != ord(b"f") else ord(b"0")
    (tmp_path / "f.ckpt").write_bytes(bytes(blob))
    with pytest.raises(CheckpointFingerprintError):
        load_checkpoint(tmp_path / "f.ckpt")
    loaded, _, _ = load_checkpoint(tmp_path / "f.ckpt", force=True)
    assert loaded is not None


def test_float64_model_not_checkpointable(tmp_path):
    model = small_model(precision="float64")
    with pytest.raises(CheckpointError):
        save_checkpoint(model, tmp_path / "m.ckpt")


def test_fingerprint_covers_vocabulary(tmp_path):
    a = small_model()
    b = small_model()
    assert fingerprint(a) == fingerprint(b)
    c = small_model()
    c.word_vocab.add("extra")
    assert fingerprint(a) != fingerprint(c)
