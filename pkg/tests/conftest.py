import numpy as np
import pytest

from aggnorm.tensor import Tape, Tensor, backward


def fd_grad(loss_fn, array: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. every entry."""
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = loss_fn()
        flat[k] = orig - h
        down = loss_fn()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    worst = 0.0
    for x, y in zip(a.reshape(-1), b.reshape(-1)):
        denom = max(abs(x), abs(y))
        if denom < floor:
            continue
        worst = max(worst, abs(x - y) / denom)
    return worst


def assert_op_gradients(loss_builder, tensors, h: float = 1e-5, tol: float = 1e-4,
                        floor: float = 1e-6):
    """Tape gradients of a scalar loss must match central differences.

    loss_builder() recomputes the loss from the tensors' current data.
    Entries that fail at step h are retried once at h/10: a step that
    straddles a relu kink or argmax tie poisons the difference, while a
    genuinely wrong gradient stays wrong as h shrinks.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    with Tape() as tape:
        loss = loss_builder()
    backward(tape, loss)
    for t in tensors:
        assert t.grad is not None, "no gradient reached an input"
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        for k in range(flat.size):
            a = float(gflat[k])
            err = None
            for h_try in (h, h / 10.0):
                orig = flat[k]
                flat[k] = orig + h_try
                up = loss_builder().item()
                flat[k] = orig - h_try
                down = loss_builder().item()
                flat[k] = orig
                fd = (up - down) / (2.0 * h_try)
                denom = max(abs(a), abs(fd))
                err = 0.0 if denom < floor else abs(a - fd) / denom
                if err < tol:
                    break
            assert err < tol, (
                f"gradient mismatch {err:.3e} at entry {k} of shape {t.data.shape}"
            )


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def t64(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)
