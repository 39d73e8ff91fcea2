"""Dense float64 tensors with tape-based reverse-mode differentiation and Adam.

Every quantity the model computes is a :class:`Tensor`. Operations executed
while a :class:`Tape` is active are recorded on it, and :func:`backward`
walks the record in reverse to produce gradients for leaf parameters.

    >>> w = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(w * w)
    >>> backward(tape, loss)[w].data
    array([2., 4.])
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(ArithmeticError):
    pass


class Tensor:
    """Immutable dense array of 64-bit floats.

    Hashing is by identity so tensors can key gradient maps.
    """

    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        # takes ownership of a freshly computed array; no copy
        t = cls.__new__(cls)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        arr.setflags(write=False)
        t.data, t.requires_grad, t.name = arr, requires_grad, None
        return t

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(t: Tensor | np.ndarray, what: str = "tensor") -> None:
    """Raise :class:`NonFiniteError` if any entry is NaN or infinite."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    if not np.all(np.isfinite(arr)):
        bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
        raise NonFiniteError(f"{what}: {bad} non-finite value(s)")


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict = field(default_factory=dict)


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of primitive operations.

    Single writer: one tape is built and consumed by one training step.
    Use as a context manager to make it the active recording target.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._producer: dict[int, int] = {}

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, attrs: dict) -> None:
        self._producer[id(output)] = len(self.nodes)
        self.nodes.append(Node(op, inputs, output, attrs))

    def produced(self, t: Tensor) -> bool:
        idx = self._producer.get(id(t))
        return idx is not None and self.nodes[idx].output is t

    def leaves(self) -> list[Tensor]:
        """Parameters (``requires_grad`` tensors not produced on this tape), in first-use order."""
        seen: dict[int, Tensor] = {}
        for node in self.nodes:
            for t in node.inputs:
                if t.requires_grad and not self.produced(t) and id(t) not in seen:
                    seen[id(t)] = t
        return list(seen.values())

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from its recorded inputs, in order.

        Intermediate inputs are taken from the replayed values, so the result
        depends only on the leaves and the op sequence.
        """
        values: dict[int, np.ndarray] = {}
        out = []
        for node in self.nodes:
            args = [values.get(id(t), t.data) for t in node.inputs]
            val = _OPS[node.op].forward(*args, **node.attrs)
            values[id(node.output)] = val
            out.append(val)
        return out


def _active() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


# ---------------------------------------------------------------------------
# primitive ops


@dataclass(frozen=True)
class _Op:
    forward: Callable[..., np.ndarray]
    # vjp(g, out, *inputs, **attrs) -> one gradient (or None) per input
    vjp: Callable[..., tuple]


_OPS: dict[str, _Op] = {}


def _apply(op: str, inputs: tuple[Tensor, ...], **attrs) -> Tensor:
    val = _OPS[op].forward(*(t.data for t in inputs), **attrs)
    tape = _active()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(np.asarray(val), needs)
    if needs:
        tape.record(op, inputs, out, attrs)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def _matmul_vjp(g, out, a, b):
    return g @ b.T, a.T @ g


def _concat_vjp(g, out, *xs, axis):
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _slice_vjp(g, out, a, *, key):
    full = np.zeros_like(a)
    full[key] = g
    return (full,)


def _sum_vjp(g, out, a, *, axis):
    if axis is None:
        return (np.full_like(a, g),)
    return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)


def _tanh_vjp(g, out, a):
    d = out * out
    np.subtract(1.0, d, out=d)
    d *= g
    return (d,)


def _segment_sum(a, *, index, rows):
    out = np.zeros((rows,) + a.shape[1:])
    np.add.at(out, index, a)
    return out


_OPS.update(
    matmul=_Op(lambda a, b: a @ b, _matmul_vjp),
    add=_Op(lambda a, b: a + b, lambda g, out, a, b: (g, g)),
    sub=_Op(lambda a, b: a - b, lambda g, out, a, b: (g, -g)),
    mul=_Op(lambda a, b: a * b, lambda g, out, a, b: (g * b, g * a)),
    scale=_Op(lambda a, *, c: a * c, lambda g, out, a, *, c: (g * c,)),
    concat=_Op(lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp),
    slice=_Op(lambda a, *, key: a[key], _slice_vjp),
    sum=_Op(lambda a, *, axis: np.sum(a, axis=axis), _sum_vjp),
    tanh=_Op(np.tanh, _tanh_vjp),
    relu=_Op(lambda a: np.maximum(a, 0.0), lambda g, out, a: (g * (a > 0),)),
    segment_sum=_Op(_segment_sum, lambda g, out, a, *, index, rows: (g[index],)),
    gather=_Op(
        lambda a, *, index: a[index],
        lambda g, out, a, *, index: (_segment_sum(g, index=index, rows=a.shape[0]),),
    ),
    broadcast_row=_Op(
        lambda a, *, rows: np.broadcast_to(a.reshape(1, -1), (rows, a.size)),
        lambda g, out, a, *, rows: (g.sum(axis=0).reshape(a.shape),),
    ),
)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    return _apply("matmul", (a, b))


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return _apply("add", (a, b))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return _apply("sub", (a, b))


def mul(a, b) -> Tensor:
    """Elementwise product of equal-shape tensors."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return _apply("mul", (a, b))


def scale(a, c: float) -> Tensor:
    return _apply("scale", (as_tensor(a),), c=float(c))


def concat(xs: Iterable, axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    if not xs:
        raise ShapeError("concat: no inputs")
    nd = xs[0].data.ndim
    ax = axis % nd
    for x in xs[1:]:
        if x.data.ndim != nd or any(
            x.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax
        ):
            raise ShapeError(f"concat: shape mismatch {xs[0].shape} vs {x.shape}")
    return _apply("concat", xs, axis=ax)


def slice_(a, key) -> Tensor:
    """Basic slicing (ints, slices, tuples thereof)."""
    a = as_tensor(a)
    try:
        a.data[key]
    except IndexError as exc:
        raise ShapeError(f"slice: {key!r} invalid for shape {a.shape}") from exc
    return _apply("slice", (a,), key=key)


def sum_(a, axis: int | None = None) -> Tensor:
    return _apply("sum", (as_tensor(a),), axis=axis)


def tanh(a) -> Tensor:
    return _apply("tanh", (as_tensor(a),))


def relu(a) -> Tensor:
    return _apply("relu", (as_tensor(a),))


def _check_index(op: str, index: np.ndarray, rows: int) -> np.ndarray:
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError(f"{op}: index must be 1-D, got shape {index.shape}")
    bad = index[(index < 0) | (index >= rows)]
    if bad.size:
        raise IndexError(f"{op}: index {int(bad[0])} out of range for {rows} rows")
    return index


def segment_sum(a, index, rows: int) -> Tensor:
    """``out[r] = sum(a[i] for i where index[i] == r)``; ``out`` has ``rows`` rows."""
    a = as_tensor(a)
    index = _check_index("segment_sum", index, rows)
    if a.data.ndim < 1 or a.shape[0] != index.size:
        raise ShapeError(f"segment_sum: shape mismatch {a.shape} vs index {index.shape}")
    return _apply("segment_sum", (a,), index=index, rows=int(rows))


def gather(a, index) -> Tensor:
    """Row lookup ``a[index]``; the adjoint of :func:`segment_sum`."""
    a = as_tensor(a)
    index = _check_index("gather", index, a.shape[0])
    return _apply("gather", (a,), index=index)


def broadcast_row(a, rows: int) -> Tensor:
    """Repeat a length-k vector (or 1xk row) into a ``rows`` x k matrix."""
    a = as_tensor(a)
    if a.data.ndim > 2 or (a.data.ndim == 2 and a.shape[0] != 1):
        raise ShapeError(f"broadcast_row: expected a row, got {a.shape}")
    return _apply("broadcast_row", (a,), rows=int(rows))


# ---------------------------------------------------------------------------
# gradients


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, Tensor]:
    """Gradients of a scalar ``loss`` with respect to leaf parameters.

    With ``params`` given, every listed tensor gets an entry (zeros if the loss
    does not depend on it); otherwise all leaves recorded on the tape do.
    The tape is left untouched.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not tape.produced(loss):
        raise ValueError("backward: loss was not produced on this tape")
    params = tape.leaves() if params is None else list(params)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = _OPS[node.op].vjp(g, node.output.data, *(t.data for t in node.inputs), **node.attrs)
        for t, gi in zip(node.inputs, in_grads):
            if not t.requires_grad or gi is None:
                continue
            prev = grads.get(id(t))
            grads[id(t)] = gi if prev is None else prev + gi
    return {p: Tensor(grads.get(id(p), np.zeros_like(p.data))) for p in params}


def grad_check(f: Callable[[Tensor], Tensor], x, step: float = 1e-6) -> float:
    """Max per-coordinate relative error between tape gradient and central differences.

    Relative error is ``|a - c| / (|a| + |c| + 1e-12)``.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    x0 = np.array(as_tensor(x).data, dtype=np.float64)
    leaf = Tensor(x0, requires_grad=True)
    with Tape() as tape:
        y = f(leaf)
    check_finite(y, "grad_check: f(x)")
    if y.size != 1:
        raise ShapeError(f"grad_check: f must be scalar-valued, got {y.shape}")
    if tape.produced(y):
        analytic = backward(tape, y, [leaf])[leaf].data
    else:
        analytic = np.zeros_like(x0)

    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp.reshape(-1)[i] += step
        xm.reshape(-1)[i] -= step
        fp, fm = f(Tensor(xp)).data, f(Tensor(xm)).data
        if not (np.isfinite(fp).all() and np.isfinite(fm).all()):
            raise NonFiniteError(f"grad_check: non-finite output perturbing coordinate {i}")
        flat[i] = (float(fp.reshape(-1)[0]) - float(fm.reshape(-1)[0])) / (2 * step)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)
    return float(rel.max()) if rel.size else 0.0


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, Tensor], grads: dict[str, Tensor | np.ndarray], state: AdamState
) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update. Returns new parameter tensors; ``state`` is advanced in place."""
    if set(params) != set(grads):
        raise ShapeError(f"adam_step: parameter/gradient names differ: {sorted(set(params) ^ set(grads))}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for name, p in params.items():
        g = grads[name].data if isinstance(grads[name], Tensor) else np.asarray(grads[name])
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: shape mismatch for {name}: {p.shape} vs {g.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m, v = np.zeros_like(p.data), np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        upd = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = Tensor(p.data - upd, requires_grad=p.requires_grad, name=p.name)
    return out, state


def clip_by_global_norm(grads: dict[str, Tensor], max_norm: float) -> tuple[dict[str, Tensor], float]:
    total = math.sqrt(sum(float(np.sum(g.data * g.data)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    k = max_norm / total
    return {n: Tensor(g.data * k) for n, g in grads.items()}, total
