"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the active :class:`Tape` (if any) and the
tape replays the recorded backward rules in reverse order::

    with Tape() as tape:
        loss = cross_entropy(matmul(x, w), targets)
    tape.backward(loss)
    w.grad  # dloss/dw

Without an active tape nothing is recorded, which is the inference path.
"""
from __future__ import annotations

import threading
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .errors import DegenerateAttentionError, ShapeError

DTYPE = np.float64
# Most negative finite float; used as the "denied" sentinel in attention masks.
NEG_INF = -np.finfo(DTYPE).max
# Scores at or below this are treated as exact-zero probability.
MASKED_THRESHOLD = NEG_INF / 2

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    """A dense array of float64 values plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar for the few ops that read naturally as operators
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class _Record:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.out = out
        self.inputs = inputs
        self.backward = backward


_local = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of differentiable operations.

    A tape is bound to the thread that entered it; concurrent training needs
    one tape per thread.
    """

    def __init__(self):
        self.records: List[_Record] = []

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.records.append(_Record(out, inputs, backward))

    def backward(self, loss: Tensor, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(loss)/d(x) into ``x.grad`` for every recorded input."""
        if grad is None:
            if loss.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss or explicit grad, got shape {loss.shape}")
            grad = np.ones_like(loss.data)
        loss.grad = grad if loss.grad is None else loss.grad + grad
        for rec in reversed(self.records):
            g = rec.out.grad
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, ig in zip(rec.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if inp.grad is None:
                    inp.grad = np.array(ig, dtype=DTYPE, copy=True)
                else:
                    inp.grad += ig


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, backward)
    return out


def _sum_to(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape`` (leading-axis broadcast only)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))).reshape(shape) if lead > 0 else g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b, where b is either a's shape or a trailing-shape bias."""
    if a.shape != b.shape and a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"add: cannot broadcast {b.shape} onto {a.shape}")

    def backward(g):
        return g, _sum_to(g, b.shape)

    return _result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape and a.shape[a.ndim - b.ndim:] != b.shape:
        raise ShapeError(f"mul: cannot broadcast {b.shape} onto {a.shape}")

    def backward(g):
        return g * b.data, _sum_to(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _result(a.data * c, (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return _result(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return _result(a.data.transpose(axes), (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``b`` may be a plain matrix shared across a's leading (batch) axes, or
    carry the same leading axes as ``a``.
    """
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and b.shape[:-2] != a.shape[:-2]:
        raise ShapeError(f"matmul: batch axes differ, {a.shape} and {b.shape}")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return _result(a.data @ b.data, (a, b), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        return (np.full(a.shape, g.reshape(())),)

    return _result(np.array(a.data.sum()), (a,), backward)


def gelu(x: Tensor) -> Tensor:
    """Exact gelu, x * Phi(x), with Phi from the error function."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(x.data * cdf, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis.

    Entries at or below the masked threshold (including -inf) get exactly
    zero probability.  A row with no finite entry raises
    :class:`DegenerateAttentionError`.
    """
    data = x.data
    valid = data > MASKED_THRESHOLD
    if not valid.any(axis=-1).all():
        raise DegenerateAttentionError("softmax row has every entry masked out")
    safe = np.where(valid, data, 0.0)
    row_max = np.where(valid, safe, -np.inf).max(axis=-1, keepdims=True)
    e = np.where(valid, np.exp(safe - row_max), 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), backward)


def add_mask(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Add a constant additive mask (broadcast over leading axes) to scores."""
    mask = np.asarray(mask, dtype=DTYPE)
    if scores.shape[-2:] != mask.shape[-2:]:
        raise ShapeError(f"mask {mask.shape} does not fit scores {scores.shape}")
    # clip so masked scores stay finite instead of overflowing to -inf
    out = np.maximum(scores.data + mask, NEG_INF)

    def backward(g):
        return (g,)

    return _result(out, (scores,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalise each row (last axis) to zero mean and unit variance, then scale and shift."""
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        gx_hat = g * gain.data
        gx = inv / d * (d * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        return gx, _sum_to(g * xhat, gain.shape), _sum_to(g, bias.shape)

    return _result(xhat * gain.data + bias.data, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout.  ``rate == 0`` or ``rng is None`` is the identity."""
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * keep,)

    return _result(x.data * keep, (x,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; repeated ids accumulate gradient."""
    ids = np.asarray(ids, dtype=np.int64)
    n_rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise IndexError(f"embedding index out of range for table with {n_rows} rows")

    def backward(g):
        gt = np.zeros(table.shape, dtype=DTYPE)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result(table.data[ids], (table,), backward)


def take_rows(x: Tensor, index: Tuple[np.ndarray, ...]) -> Tensor:
    """Gather vectors ``x[index]`` along the leading axes (e.g. (batch, position) pairs)."""
    index = tuple(np.asarray(i, dtype=np.int64) for i in index)

    def backward(g):
        gx = np.zeros(x.shape, dtype=DTYPE)
        np.add.at(gx, index, g)
        return (gx,)

    return _result(x.data[index], (x,), backward)


def log_softmax_rows(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    with np.errstate(over="ignore"):
        z = x - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, targets: Sequence[int], smoothing: float = 0.0) -> Tensor:
    """Mean label-smoothed cross-entropy over the rows of ``logits`` [m x V].

    Per row: (1 - eps) * -log p[target] + (eps / V) * sum_j -log p[j].
    """
    if not 0.0 <= smoothing < 1.0:
        raise ValueError(f"smoothing must lie in [0, 1), got {smoothing}")
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [m x V] logits, got {logits.shape}")
    m, v = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (m,):
        raise ShapeError(f"{m} logit rows but {targets.size} targets")
    if m == 0:
        raise ValueError("cross_entropy over an empty target set")
    if targets.min() < 0 or targets.max() >= v:
        raise IndexError(f"target id out of range for vocabulary of {v}")
    logp = log_softmax_rows(logits.data)
    rows = np.arange(m)
    nll = -logp[rows, targets]
    if smoothing:
        loss = ((1.0 - smoothing) * nll + (smoothing / v) * -logp.sum(axis=1)).mean()
    else:
        loss = nll.mean()

    def backward(g):
        p = np.exp(logp)
        q = np.full((m, v), smoothing / v)
        q[rows, targets] += 1.0 - smoothing
        return ((p - q) * (g.reshape(()) / m),)

    return _result(np.array(loss), (logits,), backward)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
