"""
Minimal reverse-mode differentiation over float64 numpy arrays.

Every primitive below builds a new :class:`Tensor` whose ``_backward`` closure
maps the upstream gradient to one gradient per parent.  :func:`backward`
orders the graph reachable from a scalar loss into a :class:`Tape` and runs
the closures in reverse.  Graph edges are only recorded when at least one
input requires a gradient, so evaluation-only passes cost nothing extra.

Broadcasting is deliberately narrow: operands must have identical shapes, or
one of them is a scalar, or one is a 1-d vector matching the trailing extent
of a 2-d operand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from fedmr.errors import ContractError, DimensionError, DomainError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError("tensor data must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    out.data = data
    out.op = op
    out.grad = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _check_compatible(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    return grad.sum(axis=0)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_compatible(a.data, b.data, "add")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_compatible(a.data, b.data, "sub")
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_compatible(a.data, b.data, "mul")
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_compatible(a.data, b.data, "div")
    ad, bd = a.data, b.data
    if np.any(bd == 0):
        raise DomainError("div: division by zero")
    out = ad / bd

    def backward(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)

    return _result(out, (a, b), backward, "div")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def sqrt(x) -> Tensor:
    """Square root; the derivative at exactly 0 is taken as 0."""
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, 0.5 * g / safe, 0.0),)

    return _result(out, (x,), backward, "sqrt")


def max_zero(x) -> Tensor:
    """Elementwise ``max(x, 0)``; subgradient 0 at x == 0."""
    x = as_tensor(x)
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "max_zero")


def relu(x) -> Tensor:
    return max_zero(x)


def clamp_min(x, lo: float) -> Tensor:
    """``max(x, lo)``; gradient flows only where x > lo."""
    x = as_tensor(x)
    mask = x.data > lo
    return _result(np.where(mask, x.data, lo), (x,), lambda g: (g * mask,), "clamp_min")


# ----------------------------------------------------------------- reductions


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.sum(axis=axis), (x,), backward, "sum")


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise DomainError("mean of an empty tensor")
    shape = x.shape

    def backward(g):
        g = g / count
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(x.data.mean(axis=axis), (x,), backward, "mean")


# -------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, (a, b), backward, "matmul")


def transpose(x) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


# ------------------------------------------------------------------- indexing


def take_rows(x, index) -> Tensor:
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), backward, "take_rows")


def pick(x, cols) -> Tensor:
    """Row-wise gather: ``out[i] = x[i, cols[i]]``."""
    x = as_tensor(x)
    cols = np.asarray(cols, dtype=np.intp)
    if x.ndim != 2 or cols.shape != (x.shape[0],):
        raise DimensionError(f"pick: shape {x.shape} with {cols.shape[0]} indices")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[rows, cols] = g
        return (out,)

    return _result(x.data[rows, cols], (x,), backward, "pick")


def slice_view(flat, start: int, stop: int, shape: tuple[int, ...]) -> Tensor:
    """Reshaped window ``flat[start:stop]`` of a 1-d tensor."""
    flat = as_tensor(flat)
    size = flat.shape[0]

    def backward(g):
        out = np.zeros(size)
        out[start:stop] = g.reshape(-1)
        return (out,)

    return _result(flat.data[start:stop].reshape(shape), (flat,), backward, "slice_view")


# ------------------------------------------------------------ fused distances


def pairwise_distances(x, centers) -> Tensor:
    """Euclidean distance of every row of ``x`` (n×d) to every row of ``centers`` (m×d).

    The derivative of a zero distance is taken as 0.
    """
    x, centers = as_tensor(x), as_tensor(centers)
    if x.ndim != 2 or centers.ndim != 2 or x.shape[1] != centers.shape[1]:
        raise DimensionError(f"pairwise_distances: {x.shape} vs {centers.shape}")
    diff = x.data[:, None, :] - centers.data[None, :, :]
    dist = np.sqrt(np.einsum("nmd,nmd->nm", diff, diff))

    def backward(g):
        coef = np.where(dist > 0, g / np.where(dist > 0, dist, 1.0), 0.0)
        unit = diff * coef[:, :, None]
        return unit.sum(axis=1), -unit.sum(axis=0)

    return _result(dist, (x, centers), backward, "pairwise_distances")


# --------------------------------------------------------------------- losses


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]`` (max-subtracted)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n, num_classes = logits.shape
    if n == 0:
        raise DomainError("softmax_cross_entropy of an empty batch")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise DomainError(f"labels must lie in [0, {num_classes})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = (log_norm - shifted[rows, labels]).mean()

    def backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return (probs * (g / n),)

    return _result(loss, (logits,), backward, "softmax_cross_entropy")


# ------------------------------------------------------------------ backward


@dataclass
class Tape:
    """Operations reachable from a loss, in topological (execution) order."""

    nodes: list[Tensor]

    @classmethod
    def from_loss(cls, loss: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)

    def run(self, seed: np.ndarray) -> None:
        upstream: dict[int, np.ndarray] = {id(self.nodes[-1]): seed}
        for node in reversed(self.nodes):
            g = upstream.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad = node.grad + g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in upstream:
                    upstream[key] = upstream[key] + pg
                else:
                    upstream[key] = pg


def backward(loss: Tensor) -> None:
    """Accumulate ``d loss / d t`` into ``t.grad`` for every tensor ``t`` upstream of ``loss``."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    Tape.from_loss(loss).run(np.ones_like(loss.data))


# ------------------------------------------------------------------------ SGD


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-5

    def __post_init__(self):
        # lr == 0 is accepted (a frozen step); configs parsed from files require lr > 0
        if not self.learning_rate >= 0:
            raise ContractError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise ContractError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ContractError("weight_decay must be nonnegative")


def sgd_step(params: np.ndarray, grads: np.ndarray, cfg: SgdConfig, velocity: np.ndarray) -> None:
    """In-place momentum SGD: ``v = m*v + g + wd*w``; ``w -= lr*v``."""
    if not (params.shape == grads.shape == velocity.shape):
        raise ContractError(
            f"sgd_step length mismatch: params {params.shape}, grads {grads.shape}, state {velocity.shape}"
        )
    velocity *= cfg.momentum
    velocity += grads
    if cfg.weight_decay:
        velocity += cfg.weight_decay * params
    params -= cfg.learning_rate * velocity
