"""Dense float64 matrices with a reverse-mode gradient tape.

Every value is a 2-D ``numpy.float64`` array wrapped in a :class:`Tensor`
that remembers the :class:`Tape` it lives on.  Primitive ops append one
record each to the tape; :meth:`Tape.backward` walks the records in strict
reverse order and accumulates vector-Jacobian products into leaves that
were marked trainable.

Broadcasting is deliberately absent apart from adding a ``1 x n`` row
vector to an ``m x n`` matrix.  The ReLU subgradient at exactly zero is 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes do not satisfy a primitive's shape rule."""


class ContractError(ValueError):
    """A precondition on values (not shapes) was violated."""


class NumericError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class Tensor:
    __slots__ = ("value", "tape", "requires_grad", "name", "index")

    def __init__(self, value, tape, requires_grad=False, name=None, index=-1):
        self.value = value
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name
        self.index = index

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}{self.shape}"


@dataclass
class OpRecord:
    op: str
    inputs: tuple
    output: Tensor
    forward: Callable
    vjp: Callable | None


@dataclass
class Tape:
    ops: list[OpRecord] = field(default_factory=list)
    leaves: list[Tensor] = field(default_factory=list)

    def leaf(self, value, trainable=False, name=None) -> Tensor:
        arr = as_matrix(value)
        _check_finite("leaf", arr)
        t = Tensor(arr, self, requires_grad=trainable, name=name)
        self.leaves.append(t)
        return t

    def constant(self, value, name=None) -> Tensor:
        return self.leaf(value, trainable=False, name=name)

    def record(self, op, inputs, forward, vjp) -> Tensor:
        with np.errstate(all="ignore"):
            out = forward(*[x.value for x in inputs])
        _check_finite(op, out)
        needs = any(x.requires_grad for x in inputs)
        t = Tensor(out, self, requires_grad=needs, index=len(self.ops))
        self.ops.append(OpRecord(op, tuple(inputs), t, forward, vjp if needs else None))
        return t

    def replay(self) -> list[np.ndarray]:
        """Re-run every recorded op from its recorded inputs."""
        return [rec.forward(*[x.value for x in rec.inputs]) for rec in self.ops]

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Gradient of a scalar ``loss`` with respect to every trainable leaf."""
        if loss.tape is not self:
            raise ContractError("loss tensor belongs to a different tape")
        if loss.shape != (1, 1):
            raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        stop = loss.index if loss.index >= 0 else -1
        for rec in reversed(self.ops[: stop + 1]):
            g = grads.pop(id(rec.output), None)
            if g is None or rec.vjp is None:
                continue
            with np.errstate(all="ignore"):
                parts = rec.vjp(g, *[x.value for x in rec.inputs], rec.output.value)
            for gx in parts:
                if gx is not None:
                    _check_finite(f"{rec.op} (backward)", gx)
            for x, gx in zip(rec.inputs, parts):
                if gx is None or not x.requires_grad:
                    continue
                key = id(x)
                if key in grads:
                    grads[key] = grads[key] + gx
                else:
                    grads[key] = gx
        out = {}
        for leaf in self.leaves:
            if leaf.requires_grad:
                out[leaf] = grads.get(id(leaf), np.zeros_like(leaf.value))
        return out


def as_matrix(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"matrices are 2-D, got shape {arr.shape}")
    return arr


def _check_finite(op, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced a non-finite value")


def _tape_of(args: Sequence) -> Tape:
    for a in args:
        if isinstance(a, Tensor):
            return a.tape
    raise ContractError("at least one operand must be a Tensor")


def _lift(args):
    tape = _tape_of(args)
    out = []
    for a in args:
        if isinstance(a, Tensor):
            if a.tape is not tape:
                raise ContractError("operands live on different tapes")
            out.append(a)
        else:
            out.append(tape.constant(a))
    return tape, out


def _shape_error(op, *tensors):
    shapes = " and ".join(str(t.shape) for t in tensors)
    return DimensionError(f"{op}: incompatible shapes {shapes}")


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    tape, (a, b) = _lift((a, b))
    if a.cols != b.rows:
        raise _shape_error("matmul", a, b)
    return tape.record(
        "matmul", (a, b),
        lambda x, y: x @ y,
        lambda g, x, y, out: (g @ y.T, x.T @ g),
    )


def transpose(a) -> Tensor:
    tape, (a,) = _lift((a,))
    return tape.record(
        "transpose", (a,),
        lambda x: np.ascontiguousarray(x.T),
        lambda g, x, out: (g.T,),
    )


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a ``1 x n`` row bias."""
    tape, (a, b) = _lift((a, b))
    if a.shape == b.shape:
        return tape.record(
            "add", (a, b),
            lambda x, y: x + y,
            lambda g, x, y, out: (g, g),
        )
    if b.rows == 1 and b.cols == a.cols:
        return tape.record(
            "add_row", (a, b),
            lambda x, y: x + y,
            lambda g, x, y, out: (g, g.sum(axis=0, keepdims=True)),
        )
    raise _shape_error("add", a, b)


def sub(a, b) -> Tensor:
    tape, (a, b) = _lift((a, b))
    if a.shape != b.shape:
        raise _shape_error("sub", a, b)
    return tape.record(
        "sub", (a, b),
        lambda x, y: x - y,
        lambda g, x, y, out: (g, -g),
    )


def mul(a, b) -> Tensor:
    tape, (a, b) = _lift((a, b))
    if a.shape != b.shape:
        raise _shape_error("mul", a, b)
    return tape.record(
        "mul", (a, b),
        lambda x, y: x * y,
        lambda g, x, y, out: (g * y, g * x),
    )


def scale(a, s: float) -> Tensor:
    tape, (a,) = _lift((a,))
    s = float(s)
    return tape.record(
        "scale", (a,),
        lambda x: x * s,
        lambda g, x, out: (g * s,),
    )


def relu(a) -> Tensor:
    tape, (a,) = _lift((a,))
    return tape.record(
        "relu", (a,),
        lambda x: np.maximum(x, 0.0),
        lambda g, x, out: (g * (x > 0.0),),
    )


def log(a) -> Tensor:
    tape, (a,) = _lift((a,))
    return tape.record(
        "log", (a,),
        np.log,
        lambda g, x, out: (g / x,),
    )


def _softmax(x):
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def row_softmax(a) -> Tensor:
    tape, (a,) = _lift((a,))

    def vjp(g, x, out):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return tape.record("row_softmax", (a,), _softmax, vjp)


def _log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def row_log_softmax(a) -> Tensor:
    tape, (a,) = _lift((a,))

    def vjp(g, x, out):
        return (g - np.exp(out) * g.sum(axis=1, keepdims=True),)

    return tape.record("row_log_softmax", (a,), _log_softmax, vjp)


def concat(a, b) -> Tensor:
    """Column-wise concatenation ``[a | b]``."""
    tape, (a, b) = _lift((a, b))
    if a.rows != b.rows:
        raise _shape_error("concat", a, b)
    split = a.cols
    return tape.record(
        "concat", (a, b),
        lambda x, y: np.concatenate([x, y], axis=1),
        lambda g, x, y, out: (g[:, :split], g[:, split:]),
    )


def sum_all(a) -> Tensor:
    tape, (a,) = _lift((a,))
    return tape.record(
        "sum", (a,),
        lambda x: np.array([[x.sum()]]),
        lambda g, x, out: (np.full_like(x, g[0, 0]),),
    )


def mean_all(a) -> Tensor:
    return scale(sum_all(a), 1.0 / (a.rows * a.cols))


def pick(a, index) -> Tensor:
    """Gather ``a[i, index[i]]`` into an ``N x 1`` column."""
    tape, (a,) = _lift((a,))
    idx = np.asarray(index, dtype=np.int64)
    if idx.shape != (a.rows,) or (idx.size and (idx.min() < 0 or idx.max() >= a.cols)):
        raise DimensionError(f"pick: index of shape {idx.shape} invalid for {a.shape}")
    rows = np.arange(a.rows)

    def vjp(g, x, out):
        gx = np.zeros_like(x)
        gx[rows, idx] = g[:, 0]
        return (gx,)

    return tape.record("pick", (a,), lambda x: x[rows, idx][:, None], vjp)


def row_normalize(a) -> Tensor:
    """Divide each row by its sum; rows summing to zero stay zero.

    Intended for nonnegative adjacency matrices.
    """
    tape, (a,) = _lift((a,))
    return tape.record(
        "row_normalize", (a,),
        lambda x: kernels.row_normalize(x)[0],
        lambda g, x, out: (kernels.row_normalize_backward(g, x, out),),
    )


def row_sums(a) -> Tensor:
    tape, (a,) = _lift((a,))
    return tape.record(
        "row_sums", (a,),
        lambda x: x.sum(axis=1, keepdims=True),
        lambda g, x, out: (np.broadcast_to(g, x.shape).copy(),),
    )


NORM_FLOOR = 1e-12


def row_norms(x: np.ndarray) -> np.ndarray:
    """Euclidean norm of each row as a column, scaled by the row maximum so
    large entries do not overflow when squared."""
    m = np.abs(x).max(axis=1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sqrt(((x / safe) ** 2).sum(axis=1, keepdims=True))


def row_l2_normalize(a) -> Tensor:
    """Scale rows to unit length; norms below ``NORM_FLOOR`` are floored."""
    tape, (a,) = _lift((a,))

    def fwd(x):
        return x / np.maximum(row_norms(x), NORM_FLOOR)

    def vjp(g, x, out):
        n = row_norms(x)
        live = n > NORM_FLOOR
        proj = g - out * (g * out).sum(axis=1, keepdims=True)
        return (np.where(live, proj, g) / np.maximum(n, NORM_FLOOR),)

    return tape.record("row_l2_normalize", (a,), fwd, vjp)


def smooth_l1(a, beta: float = 1.0) -> Tensor:
    """Elementwise Huber-style loss: ``0.5 x^2 / beta`` inside, ``|x| - beta/2`` outside."""
    tape, (a,) = _lift((a,))

    def fwd(x):
        ax = np.abs(x)
        return np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)

    def vjp(g, x, out):
        return (g * np.where(np.abs(x) < beta, x / beta, np.sign(x)),)

    return tape.record("smooth_l1", (a,), fwd, vjp)


def smooth_l1_value(x, beta: float = 1.0):
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


# ---------------------------------------------------------------------------
# finite differences


def finite_difference(fn: Callable[[dict[str, np.ndarray]], float],
                      params: dict[str, np.ndarray], h: float = 1e-6,
                      names: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Central differences of a scalar function of named arrays."""
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    out = {}
    for name in names or list(work):
        arr = work[name]
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = fn(work)
            arr[idx] = orig - h
            down = fn(work)
            arr[idx] = orig
            grad[idx] = (up - down) / (2.0 * h)
        out[name] = grad
    return out


@dataclass
class GradCheck:
    max_rel_error: float
    max_abs_error: float
    worst: str
    entries: int

    def passed(self, rel_tol=1e-5, abs_tol=1e-8) -> bool:
        return self.max_rel_error < rel_tol and self.max_abs_error < abs_tol


def compare_gradients(analytic: dict[str, np.ndarray], numeric: dict[str, np.ndarray],
                      small: float = 1e-8) -> GradCheck:
    """Relative error per entry; entries where both sides are below ``small``
    are compared absolutely instead."""
    max_rel, max_abs, worst, count = 0.0, 0.0, "", 0
    for name, num in numeric.items():
        ana = analytic[name]
        if ana.shape != num.shape:
            raise DimensionError(f"gradient {name}: {ana.shape} vs {num.shape}")
        diff = np.abs(ana - num)
        scale_ = np.maximum(np.abs(ana), np.abs(num))
        tiny = scale_ < small
        if tiny.any():
            a = diff[tiny].max()
            if a > max_abs:
                max_abs = a
        if (~tiny).any():
            r = (diff[~tiny] / scale_[~tiny]).max()
            if r > max_rel:
                max_rel, worst = r, name
        count += num.size
    return GradCheck(max_rel, max_abs, worst, count)
