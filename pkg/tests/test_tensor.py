import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggnorm.errors import ContractError, ShapeError
from aggnorm.tensor import (
    Parameter,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    dropout,
    exp,
    flip_rows,
    frobenius_sq,
    grad_reverse,
    layer_norm,
    log,
    matmul,
    maximum_const,
    mul,
    neg,
    pick_rows,
    relu,
    reshape,
    rows,
    scale,
    sigmoid,
    softmax,
    tanh,
    tmean,
    transpose,
    tsum,
)

from conftest import assert_op_gradients, t64


# ---------------------------------------------------------------------------
# matmul


def test_matmul_identity():
    a = t64(np.arange(12.0).reshape(3, 4))
    eye = t64(np.eye(3))
    assert np.array_equal(matmul(eye, a).data, a.data)


def test_matmul_hand():
    out = matmul(t64([[1, 2], [3, 4]]), t64([[5], [6]]))
    assert np.array_equal(out.data, [[17], [39]])


def test_matmul_triple_loop_oracle(rng):
    for _ in range(100):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 5))
        got = matmul(t64(a), t64(b)).data
        want = np.zeros((3, 5))
        for i in range(3):
            for j in range(5):
                for k in range(4):
                    want[i, j] += a[i, k] * b[k, j]
        assert np.abs(got - want).max() < 1e-12


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ShapeError) as err:
        matmul(t64(np.zeros((2, 3))), t64(np.zeros((4, 2))))
    assert "(2, 3)" in str(err.value) and "(4, 2)" in str(err.value)


def test_matmul_gradients(rng):
    a = t64(rng.normal(size=(3, 4)))
    b = t64(rng.normal(size=(4, 2)))
    assert_op_gradients(lambda: tsum(mul(matmul(a, b), matmul(a, b))), [a, b])


# ---------------------------------------------------------------------------
# softmax


def test_softmax_uniform_on_equal_inputs():
    out = softmax(t64([[0.0, 0.0, 0.0]]), axis=1)
    assert np.abs(out.data - 1.0 / 3.0).max() < 1e-15


def test_softmax_closed_form():
    out = softmax(t64([[np.log(1), np.log(2), np.log(3)]]), axis=1)
    assert np.abs(out.data - np.array([1 / 6, 2 / 6, 3 / 6])).max() < 1e-12


def test_softmax_dominance_no_overflow():
    out = softmax(t64([[1000.0, 0.0]]), axis=1)
    assert np.array_equal(out.data, [[1.0, 0.0]])


def test_softmax_empty_axis_rejected():
    with pytest.raises(ShapeError):
        softmax(t64(np.zeros((0, 3))), axis=0)
    with pytest.raises(ShapeError):
        softmax(t64(np.zeros((2, 2))), axis=5)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.lists(st.floats(min_value=-1e4, max_value=1e4), min_size=1, max_size=6),
        min_size=1,
        max_size=5,
    ).filter(lambda rows_: len({len(r) for r in rows_}) == 1)
)
def test_softmax_rows_sum_to_one(rows_):
    out = softmax(t64(rows_), axis=1)
    sums = out.data.sum(axis=1)
    assert np.abs(sums - 1.0).max() < 1e-6
    assert out.data.min() >= 0.0


def test_softmax_gradients(rng):
    x = t64(rng.normal(size=(4, 5)) * 3)
    w = rng.normal(size=(4, 5))
    assert_op_gradients(lambda: tsum(mul(softmax(x, axis=1), t64(w))), [x])


# ---------------------------------------------------------------------------
# backward mechanics


def test_backward_sum_gives_ones():
    x = t64(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with Tape() as tape:
        loss = tsum(x)
    backward(tape, loss)
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_square_at_three():
    x = t64([3.0], requires_grad=True)
    with Tape() as tape:
        loss = tsum(mul(x, x))
    backward(tape, loss)
    assert np.abs(x.grad - 6.0).max() < 1e-15


def test_backward_requires_scalar_loss():
    x = t64(np.ones((2, 2)), requires_grad=True)
    with Tape() as tape:
        y = mul(x, x)
    with pytest.raises(ContractError):
        backward(tape, y)


def test_backward_loss_must_be_on_tape():
    x = t64(np.ones(3), requires_grad=True)
    with Tape() as tape:
        tsum(x)
    off_tape = t64([1.0])
    with pytest.raises(ContractError):
        backward(tape, off_tape)


def test_fanout_accumulates_sum_of_branches(rng):
    base = rng.normal(size=(3, 3))
    w = rng.normal(size=(3, 3))

    def branch_a(x):
        return tsum(mul(tanh(x), t64(w)))

    def branch_b(x):
        return tsum(mul(x, x))

    x = t64(base, requires_grad=True)
    with Tape() as tape:
        loss = add(branch_a(x), branch_b(x))
    backward(tape, loss)
    combined = x.grad.copy()

    parts = []
    for branch in (branch_a, branch_b):
        x = t64(base, requires_grad=True)
        with Tape() as tape:
            loss = branch(x)
        backward(tape, loss)
        parts.append(x.grad.copy())
    assert np.abs(combined - (parts[0] + parts[1])).max() < 1e-12


# ---------------------------------------------------------------------------
# grad_reverse


def test_grad_reverse_identity_forward_bitwise():
    x = t64(np.random.default_rng(0).normal(size=(4, 3)))
    out = grad_reverse(x)
    assert np.array_equal(out.data, x.data)


def test_grad_reverse_negates_upstream_exactly(rng):
    w = rng.normal(size=(3, 2))
    x_plain = t64(rng.normal(size=(4, 3)), requires_grad=True)
    x_rev = t64(x_plain.data.copy(), requires_grad=True)

    with Tape() as tape:
        loss = tsum(tanh(matmul(x_plain, t64(w))))
    backward(tape, loss)
    with Tape() as tape:
        loss = tsum(tanh(matmul(grad_reverse(x_rev), t64(w))))
    backward(tape, loss)
    assert np.array_equal(x_rev.grad, -x_plain.grad)


# ---------------------------------------------------------------------------
# elementwise and structural primitives


@pytest.mark.parametrize(
    "op,n_inputs",
    [
        (lambda a, b: add(a, b), 2),
        (lambda a, b: mul(a, b), 2),
        (lambda a, b: add(tanh(a), sigmoid(b)), 2),
        (lambda a, b: mul(relu(a), b), 2),
        (lambda a, b: mul(exp(scale(a, 0.3)), b), 2),
        (lambda a, b: concat([a, b], axis=1), 2),
        (lambda a, b: matmul(transpose(a), b), 2),
        (lambda a, b: add(flip_rows(a), b), 2),
        (lambda a, b: add(neg(a), b), 2),
    ],
)
def test_primitive_gradients_randomized(rng, op, n_inputs):
    for _ in range(5):
        a = t64(rng.normal(size=(3, 4)))
        b = t64(rng.normal(size=(3, 4)))
        assert_op_gradients(lambda: tsum(mul(op(a, b), op(a, b))), [a, b])


def test_add_broadcasting_bias_gradients(rng):
    x = t64(rng.normal(size=(4, 3)))
    bias = t64(rng.normal(size=(3,)))
    assert_op_gradients(lambda: tsum(mul(add(x, bias), add(x, bias))), [x, bias])


def test_log_gradients_and_domain(rng):
    x = t64(rng.uniform(0.5, 2.0, size=(3, 3)))
    assert_op_gradients(lambda: tsum(log(x)), [x])
    with pytest.raises(ContractError):
        log(t64([-1.0]))


def test_rows_gather_scatter_gradients(rng):
    table = t64(rng.normal(size=(6, 4)))
    ids = np.array([0, 2, 2, 5])
    w = rng.normal(size=(4, 4))
    assert_op_gradients(lambda: tsum(mul(rows(table, ids), t64(w))), [table])
    with pytest.raises(ShapeError):
        rows(table, [7])


def test_pick_rows_values_and_gradients(rng):
    x = t64(rng.uniform(0.1, 1.0, size=(4, 3)))
    idx = [0, 2, 1, 1]
    picked = pick_rows(x, idx)
    assert np.array_equal(picked.data, x.data[np.arange(4), idx])
    assert_op_gradients(lambda: tsum(mul(pick_rows(x, idx), pick_rows(x, idx))), [x])


def test_reshape_and_mean_gradients(rng):
    x = t64(rng.normal(size=(2, 6)))
    assert_op_gradients(lambda: tmean(mul(reshape(x, (3, 4)), reshape(x, (3, 4)))), [x])


def test_maximum_const_clamps_and_blocks_gradient():
    x = t64([0.5, 1e-15, 2.0], requires_grad=True)
    out = maximum_const(x, 1e-12)
    assert out.data[1] == 1e-12
    with Tape() as tape:
        loss = tsum(maximum_const(x, 1e-12))
    backward(tape, loss)
    assert np.array_equal(x.grad, [1.0, 0.0, 1.0])


def test_layer_norm_rows_and_gradients(rng):
    x = t64(rng.normal(size=(4, 6)) * 2)
    g = t64(rng.uniform(0.5, 1.5, size=6))
    b = t64(rng.normal(size=6))
    out = layer_norm(x, g, b)
    normed = (out.data - b.data) / g.data
    assert np.abs(normed.mean(axis=1)).max() < 1e-10
    assert np.abs(normed.std(axis=1) - 1.0).max() < 1e-4
    assert_op_gradients(lambda: tsum(mul(layer_norm(x, g, b), layer_norm(x, g, b))),
                        [x, g, b])


def test_dropout_train_eval_and_scaling():
    x = Tensor(np.ones((200, 10), dtype=np.float64))
    out_eval = dropout(x, 0.4, np.random.default_rng(0), training=False)
    assert out_eval is x
    out = dropout(x, 0.4, np.random.default_rng(0), training=True)
    kept = out.data != 0
    # inverted scaling: survivors are 1/(1-p)
    assert np.allclose(out.data[kept], 1.0 / 0.6)
    assert 0.5 < kept.mean() < 0.7
    # same seed, same mask
    out2 = dropout(x, 0.4, np.random.default_rng(0), training=True)
    assert np.array_equal(out.data, out2.data)


def test_dropout_gradient_masks_match(rng):
    x = t64(rng.normal(size=(5, 4)), requires_grad=True)
    with Tape() as tape:
        out = dropout(x, 0.5, np.random.default_rng(3), training=True)
        loss = tsum(out)
    backward(tape, loss)
    mask = out.data != 0
    assert np.array_equal(x.grad != 0, mask)
    assert np.allclose(x.grad[mask], 2.0)


def test_cross_entropy_examples():
    # certain gold -> 0
    dists = t64([[1.0, 0.0], [1.0, 0.0]])
    assert cross_entropy(dists, [0, 0]).item() < 1e-12
    # uniform over K classes, N instances -> N ln K
    n, k = 5, 4
    uniform = t64(np.full((n, k), 1.0 / k))
    assert abs(cross_entropy(uniform, [0] * n).item() - n * np.log(k)) < 1e-12


def test_cross_entropy_oracle(rng):
    for _ in range(100):
        raw = rng.uniform(0.05, 1.0, size=(6, 3))
        dists = raw / raw.sum(axis=1, keepdims=True)
        gold = rng.integers(0, 3, size=6)
        got = cross_entropy(t64(dists), gold).item()
        want = -sum(np.log(dists[i, gold[i]]) for i in range(6))
        assert abs(got - want) < 1e-10


def test_frobenius_sq_hand_and_oracle(rng):
    assert frobenius_sq(t64(np.eye(2))).item() == 2.0
    for _ in range(20):
        m = rng.normal(size=(4, 5))
        want = sum(v * v for v in m.reshape(-1))
        assert abs(frobenius_sq(t64(m)).item() - want) < 1e-10


def test_dtype_mismatch_rejected():
    a = Tensor(np.zeros(3, dtype=np.float32))
    b = Tensor(np.zeros(3, dtype=np.float64))
    with pytest.raises(ShapeError):
        add(a, b)


def test_fixed_op_sequence_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(99)
        x = Tensor(rng.normal(size=(8, 8)).astype(np.float32), requires_grad=True)
        w = Tensor(rng.normal(size=(8, 8)).astype(np.float32), requires_grad=True)
        with Tape() as tape:
            h = tanh(matmul(x, w))
            out = softmax(add(h, x), axis=1)
            loss = tsum(mul(out, out))
        backward(tape, loss)
        return loss.data.copy(), x.grad.copy(), w.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        assert np.array_equal(a, b)


def test_intermediate_requires_grad_receives_grad(rng):
    x = t64(rng.normal(size=(3, 3)), requires_grad=True)
    with Tape() as tape:
        h = tanh(x)
        loss = tsum(h)
    backward(tape, loss)
    assert h.grad is not None and np.array_equal(h.grad, np.ones((3, 3)))


def test_parameter_is_named_leaf():
    p = Parameter(np.zeros((2, 2), dtype=np.float32), "toy.w")
    assert p.requires_grad and p.name == "toy.w"
