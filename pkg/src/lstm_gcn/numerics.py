"""Dense reverse-mode autodiff over float64 numpy arrays.

Only the handful of operations the recurrent graph models need are provided.
Operations executed inside an active :class:`Tape` on tensors that require
gradients are recorded; :func:`backward` replays the recording in reverse.

    >>> w = Tensor([[1.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = mse_loss(matmul(w, Tensor([[1.0]])), Tensor([[0.0]]))
    >>> backward(loss)
    >>> float(w.grad[0, 0])
    2.0
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "no_grad",
    "matmul",
    "add",
    "matmul_sorted",
    "add_bias",
    "sub",
    "hadamard",
    "scale",
    "concat_columns",
    "take_rows",
    "flatten",
    "reshape",
    "sigmoid",
    "tanh",
    "relu",
    "identity",
    "mse_loss",
    "sum_all",
    "backward",
    "finite_difference_check",
    "ACTIVATIONS",
]


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class Tensor:
    """A float64 array with an optional gradient and a tape handle."""

    __slots__ = ("values", "grad", "requires_grad", "node_id", "_tape")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.array(values, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.values)

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class _Record:
    __slots__ = ("name", "inputs", "output", "rule")

    def __init__(self, name, inputs, output, rule):
        self.name = name
        self.inputs = inputs
        self.output = output
        self.rule = rule


_state = threading.local()


def _stack() -> list:
    try:
        return _state.tapes
    except AttributeError:
        _state.tapes = []
        _state.enabled = True
        return _state.tapes


class Tape:
    """Ordered record of differentiable operations (define-by-run).

    A tape is confined to the thread that entered it.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def _record(self, name, inputs, output, rule) -> None:
        output.node_id = len(self.records)
        output._tape = self
        self.records.append(_Record(name, inputs, output, rule))


@contextlib.contextmanager
def no_grad():
    """Disable recording in the current thread."""
    _stack()
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _emit(name: str, inputs: Sequence[Tensor], values: np.ndarray, rule) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.values = values
    out.grad = None
    out.node_id = None
    out._tape = None
    tapes = _stack()
    if _state.enabled and tapes and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tapes[-1]._record(name, tuple(inputs), out, rule)
    else:
        out.requires_grad = False
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of ``m x k`` and ``k x n`` operands.

    A 1-d left operand is treated as a row vector and the result is 1-d.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if b.values.ndim != 2 or a.values.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.values, b.values

    def rule(g):
        if av.ndim == 1:
            return g @ bv.T, np.outer(av, g)
        return g @ bv.T, av.T @ g

    return _emit("matmul", (a, b), av @ bv, rule)


def matmul_sorted(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with each inner sum taken over its terms in sorted order.

    Relabeling the summation index then cannot change a single bit of the
    result, at the cost of materializing every ``m x k x n`` product term.
    The gradient is the ordinary matmul rule.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul_sorted: shapes {a.shape} and {b.shape} do not conform")
    av, bv = a.values, b.values
    terms = av[:, :, None] * bv[None, :, :]
    terms.sort(axis=1)
    return _emit("matmul_sorted", (a, b), terms.sum(axis=1), lambda g: (g @ bv.T, av.T @ g))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.values + b.values, lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.values - b.values, lambda g: (g, -g))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-``m`` bias to every row of an ``n x m`` (or length-``m``) tensor."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.values.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"add_bias: shapes {x.shape} and {b.shape} do not conform")
    if x.values.ndim == 1:
        return _emit("add_bias", (x, b), x.values + b.values, lambda g: (g, g))
    return _emit("add_bias", (x, b), x.values + b.values, lambda g: (g, g.sum(axis=0)))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("hadamard", a, b)
    av, bv = a.values, b.values
    return _emit("hadamard", (a, b), av * bv, lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.values * c, lambda g: (g * c,))


def concat_columns(*tensors: Tensor) -> Tensor:
    """Horizontal concatenation of tensors with equal row counts."""
    ts = [_as_tensor(t) for t in tensors]
    if not ts or any(t.values.ndim != 2 for t in ts):
        raise ShapeError("concat_columns: needs one or more 2-d tensors")
    rows = {t.shape[0] for t in ts}
    if len(rows) != 1:
        raise ShapeError(f"concat_columns: row counts differ: {[t.shape for t in ts]}")
    bounds = np.cumsum([0] + [t.shape[1] for t in ts])

    def rule(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _emit("concat_columns", ts, np.concatenate([t.values for t in ts], axis=1), rule)


def take_rows(a: Tensor, index) -> Tensor:
    a = _as_tensor(a)
    idx = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def rule(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _emit("take_rows", (a,), a.values[idx], rule)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    try:
        values = a.values.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {old} as {shape}") from exc
    return _emit("reshape", (a,), values, lambda g: (g.reshape(old),))


def flatten(a: Tensor) -> Tensor:
    """Row-major flatten to a 1-d tensor."""
    return reshape(a, (-1,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _stable_sigmoid(a.values)
    return _emit("sigmoid", (a,), s, lambda g: (g * s * (1.0 - s),))


def tanh(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    t = np.tanh(a.values)
    return _emit("tanh", (a,), t, lambda g: (g * (1.0 - t * t),))


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.values > 0
    return _emit("relu", (a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def identity(a: Tensor) -> Tensor:
    return _as_tensor(a)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": identity,
}


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _emit("sum_all", (a,), np.array(a.values.sum()), lambda g: (np.full(shape, g),))


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences, returned as a 0-d tensor."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _same_shape("mse_loss", pred, target)
    diff = pred.values - target.values
    n = diff.size
    return _emit(
        "mse_loss",
        (pred, target),
        np.array(np.mean(diff * diff)),
        lambda g: (2.0 * g * diff / n, -2.0 * g * diff / n),
    )


# ------------------------------------------------------------------- reverse


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor reachable on its tape."""
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("backward: loss was not recorded on a tape")
    loss.grad = np.ones_like(loss.values)
    for rec in reversed(tape.records[: loss.node_id + 1]):
        g = rec.output.grad
        if g is None:
            continue
        grads = rec.rule(g)
        for inp, gi in zip(rec.inputs, grads):
            if not inp.requires_grad or gi is None:
                continue
            inp.grad = gi if inp.grad is None else inp.grad + gi


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    h: float = 1e-6,
    floor: float = 1e-8,
) -> float:
    """Largest relative error between autodiff and central-difference gradients.

    ``f`` rebuilds the scalar loss from the current values of ``params``. Each
    coordinate's error is ``|g_auto - g_fd| / max(|g_auto|, floor)``.
    """
    params = list(params)
    for p in params:
        p.zero_grad()
    with Tape():
        loss = f()
        if loss.requires_grad:
            backward(loss)
    worst = 0.0
    for p in params:
        auto = p.grad if p.grad is not None else np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(f().values)
                flat[i] = orig - h
                down = float(f().values)
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            ga = auto.reshape(-1)[i]
            err = abs(ga - fd) / max(abs(ga), floor)
            worst = max(worst, err)
    return worst
