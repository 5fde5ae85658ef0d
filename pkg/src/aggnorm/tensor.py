"""Dense tensors with a recorded computation tape for reverse-mode autodiff.

Values live in numpy arrays, float32 in training mode and float64 in
verification mode (finite-difference checks are unreliable at 32-bit).
Every operation that participates in differentiation computes its result
eagerly and, when a tape is active and an input requires gradients,
appends a node holding the backward rule.  `backward` replays the tape in
reverse, accumulating gradients across fan-out by summation.

No op here checks for NaN/Inf; callers that need the guarantee (the
training loop, mostly) use `assert_finite` at loss boundaries.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, ShapeError

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "backward",
    "tensor",
    "make_op",
    "add",
    "sub",
    "mul",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "rows",
    "flip_rows",
    "pick_rows",
    "tsum",
    "tmean",
    "maximum_const",
    "exp",
    "log",
    "tanh",
    "sigmoid",
    "relu",
    "softmax",
    "layer_norm",
    "dropout",
    "grad_reverse",
    "scale_grad",
    "cross_entropy",
    "frobenius_sq",
    "xavier_uniform",
    "assert_finite",
]


class Tensor:
    """A dense multi-dimensional array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is not None:
            self.data = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray):
            self.data = data
        elif isinstance(data, np.generic):
            # numpy scalar (e.g. a full reduction): keep its dtype
            self.data = np.asarray(data)
        else:
            self.data = np.asarray(data, dtype=np.float32)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{tag})"

    # Arithmetic sugar; python scalars stay in the tensor's dtype.
    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor updated by the optimizer."""

    __slots__ = ()

    def __init__(self, data, name):
        super().__init__(data, requires_grad=True, name=name)


def tensor(data, dtype=np.float32, requires_grad=False):
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _coerce(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


# ---------------------------------------------------------------------------
# Tape


class _Node:
    __slots__ = ("inputs", "output", "backward_fn")

    def __init__(self, inputs, output, backward_fn):
        self.inputs = inputs
        self.output = output
        self.backward_fn = backward_fn


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations; append order is topological order."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


def _current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def make_op(data, inputs, backward_fn):
    """Create an op output: eagerly computed data plus a recorded backward rule."""
    out = Tensor(data)
    tape = _current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(tuple(inputs), out, backward_fn))
    return out


def backward(tape: Tape, loss: Tensor):
    """Reverse-replay the tape from `loss`, accumulating `.grad` fields.

    Gradients sum across fan-out.  Every tensor that requires gradients
    and lies on a path from a leaf to the loss receives `.grad`.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not any(node.output is loss for node in tape.nodes):
        raise ContractError("loss tensor is not on the tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        holders.pop(id(node.output), None)
        if g_out is None:
            continue
        if node.output.requires_grad:
            node.output.grad = g_out if node.output.grad is None else node.output.grad + g_out
        for t, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not t.requires_grad:
                continue
            acc = grads.get(id(t))
            grads[id(t)] = g if acc is None else acc + g
            holders[id(t)] = t
    for key, t in holders.items():
        t.grad = grads[key] if t.grad is None else t.grad + grads[key]


# ---------------------------------------------------------------------------
# Elementwise and structural ops


def _check_same_dtype(a, b, op):
    if a.data.dtype != b.data.dtype:
        raise ShapeError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "add")
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return make_op(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "sub")
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return make_op(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "mul")
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return make_op(data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    return make_op(-a.data, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar without the broadcasting machinery."""
    c = float(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype(a, b, "matmul")
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    data = a.data @ b.data

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return make_op(data, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D tensor, got {a.data.shape}")
    return make_op(a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return make_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of zero tensors")
    for t in tensors[1:]:
        _check_same_dtype(tensors[0], t, "concat")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    split_at = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, split_at, axis=axis))

    return make_op(data, tuple(tensors), bwd)


def rows(table: Tensor, ids) -> Tensor:
    """Gather rows `table[ids]`; backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeError(
            f"row index out of range for table with {table.data.shape[0]} rows"
        )
    data = table.data[ids]

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make_op(data, (table,), bwd)


def flip_rows(a: Tensor) -> Tensor:
    return make_op(a.data[::-1].copy(), (a,), lambda g: (g[::-1].copy(),))


def pick_rows(a: Tensor, indices) -> Tensor:
    """out[i] = a[i, indices[i]] for a 2-D tensor."""
    idx = np.asarray(indices, dtype=np.intp)
    if a.data.ndim != 2 or idx.shape != (a.data.shape[0],):
        raise ShapeError(f"pick_rows: shape {a.data.shape} with {idx.shape} indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[1]):
        raise ShapeError(f"pick_rows: column index out of range for {a.data.shape}")
    arange = np.arange(a.data.shape[0])
    data = a.data[arange, idx]

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[arange, idx] = g
        return (ga,)

    return make_op(data, (a,), bwd)


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)
        g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=True),)

    return make_op(data, (a,), bwd)


def tmean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(tsum(a, axis=axis), 1.0 / n)


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max with a constant; gradient passes where a >= c."""
    c = float(c)
    data = np.maximum(a.data, c)

    def bwd(g):
        return (g * (a.data >= c),)

    return make_op(data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return make_op(data, (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    if a.data.size and a.data.min() <= 0:
        raise ContractError("log of non-positive value")
    return make_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    return make_op(data, (a,), lambda g: (g * (1.0 - data * data),))


def sigmoid(a: Tensor) -> Tensor:
    data = np.empty_like(a.data)
    np.negative(a.data, out=data)
    np.exp(data, out=data)
    data += 1.0
    np.reciprocal(data, out=data)
    return make_op(data, (a,), lambda g: (g * data * (1.0 - data),))


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)
    return make_op(data, (a,), lambda g: (g * (a.data > 0),))


def softmax(a: Tensor, axis: int) -> Tensor:
    """Stable softmax along `axis` (subtracts the running max first)."""
    if not -a.data.ndim <= axis < a.data.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.data.shape}")
    if a.data.shape[axis] == 0:
        raise ShapeError(f"softmax over empty axis {axis} of shape {a.data.shape}")
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return make_op(y, (a,), bwd)


_LN_EPS = 1e-5


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Row-wise layer normalization over the last axis of a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm needs a 2-D input, got {x.data.shape}")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv_std
    data = xhat * gain.data + bias.data

    def bwd(g):
        dxhat = g * gain.data
        # standard layernorm backward, derived from xhat = (x - mu) * inv_std
        dx = inv_std / d * (
            d * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return make_op(data, (x, gain, bias), bwd)


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout: scales by 1/(1-p) at train time, identity at eval."""
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {p}")
    keep = rng.random(x.data.shape) >= p
    factor = 1.0 / (1.0 - p)
    data = x.data * keep * factor

    def bwd(g):
        return (g * keep * factor,)

    return make_op(data, (x,), bwd)


def grad_reverse(x: Tensor) -> Tensor:
    """Identity forward; backward negates the upstream gradient."""
    return make_op(x.data, (x,), lambda g: (-g,))


def scale_grad(x: Tensor, c: float) -> Tensor:
    """Identity forward; backward scales the upstream gradient by c.

    Composed with grad_reverse this realizes the saddle point: the
    discriminator trains at full rate while the encoder sees only the
    c-weighted reversed gradient."""
    c = float(c)
    return make_op(x.data, (x,), lambda g: (g * c,))


def cross_entropy(dists: Tensor, targets, clamp=1e-12) -> Tensor:
    """Summed negative log-likelihood of integer targets under row
    distributions, with probabilities clamped at `clamp` before the log."""
    picked = pick_rows(dists, targets)
    return neg(tsum(log(maximum_const(picked, clamp))))


def frobenius_sq(a: Tensor) -> Tensor:
    """Squared Frobenius norm: sum of squared entries."""
    return tsum(mul(a, a))


# ---------------------------------------------------------------------------
# Helpers


def xavier_uniform(shape, fan_in, fan_out, rng: np.random.Generator, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def assert_finite(t: Tensor, what: str):
    if not np.isfinite(t.data).all():
        raise ContractError(f"non-finite values in {what}")
    return t
