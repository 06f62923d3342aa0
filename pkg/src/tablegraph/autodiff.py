"""A small dense reverse-mode differentiation engine on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
that graph once in reverse topological order and sums gradients over fan-out.

Broadcasting is limited to leading dimensions: two operands must either have
equal shapes or one shape must be a suffix of the other (a bias of shape
``(D,)`` against activations of shape ``(B, N, D)``, for example).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "grad_fn", "name")

    def __init__(self, data, requires_grad=False, parents=(), grad_fn=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = parents
        self.grad_fn: Optional[Callable] = grad_fn
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Sequence[Tensor], grad_fn) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data)
    return Tensor(data, True, tuple(parents), grad_fn)


def _check_broadcast(a: tuple, b: tuple, op: str):
    if a == b:
        return
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if long_[len(long_) - len(short):] != short:
        raise ShapeError(f"{op}: incompatible shapes {a} and {b}")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "add")
    return _make(
        a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "sub")
    return _make(
        a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.shape, b.shape, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    if p == 0:
        return _make(np.ones_like(x.data), (x,), lambda g: (np.zeros_like(g),))
    return _make(x.data ** p, (x,), lambda g: (g * p * x.data ** (p - 1),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    positive = x.data > 0
    # np.maximum keeps NaN, so a diverged activation is not silently zeroed
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * positive,))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),))


def softplus(x) -> Tensor:
    """log(1 + exp(x)), evaluated without overflow."""
    x = as_tensor(x)
    y = np.logaddexp(0.0, x.data)
    return _make(y, (x,), lambda g: (g * _sigmoid(x.data),))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,))


# ---------------------------------------------------------------- reductions


def reduce_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (x,), grad_fn)


def reduce_mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return scale(reduce_sum(x, axis, keepdims), 1.0 / count)


def reduce_max(x, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(y, (x,), grad_fn)


def softmax(x, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    x = as_tensor(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mask = mask.reshape((1,) * (x.ndim - mask.ndim) + mask.shape)
        np.broadcast_shapes(mask.shape, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax: a slice is fully masked")
        y = np.where(mask, x.data, -np.inf)
    else:
        y = x.data.copy()
    y -= y.max(axis=axis, keepdims=True)
    np.exp(y, out=y)
    y /= y.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        gx = g * y
        gx -= y * gx.sum(axis=axis, keepdims=True)
        return (gx,)

    return _make(y, (x,), grad_fn)


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """``(..., n, k) @ (k, m)`` or batched ``(..., n, k) @ (..., k, m)``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions differ in {a.shape} and {b.shape}")
    y = np.matmul(a.data, b.data)

    def grad_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return _make(y, (a, b), grad_fn)


# ---------------------------------------------------------------- shape ops


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape} on axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=ax)
    return _make(y, tensors, lambda g: tuple(np.split(g, splits, axis=ax)))


def take(x, key) -> Tensor:
    """Basic or advanced indexing (``x[key]``); the backward scatters."""
    x = as_tensor(x)

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(x.data[key], (x,), grad_fn)


def pad(x, before: int, after: int, axis: int) -> Tensor:
    """Zero padding along one axis."""
    x = as_tensor(x)
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    y = np.pad(x.data, widths)
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(before, before + x.shape[axis])
    return _make(y, (x,), lambda g: (g[tuple(sl)],))


def gather(x, indices: np.ndarray) -> Tensor:
    """Rows of a 2-D tensor by index; index -1 yields a zero row.

    Output shape is ``indices.shape + (x.shape[1],)``.
    """
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"gather: expected a 2-D source, got {x.shape}")
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.max() >= x.shape[0] or indices.min() < -1):
        raise IndexError(f"gather: index out of range for {x.shape[0]} rows")
    valid = indices >= 0
    safe = np.where(valid, indices, 0)
    y = x.data[safe] * valid[..., None]

    def grad_fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, safe[valid], g[valid])
        return (gx,)

    return _make(y, (x,), grad_fn)


# ---------------------------------------------------------------- fused layers


def layer_norm(x, gamma, beta, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def grad_fn(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        gbeta = g.reshape(-1, d).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(y, (x, gamma, beta), grad_fn)


def dropout(x, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    x = as_tensor(x)
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# ---------------------------------------------------------------- backward


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tracked tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; call :func:`zero_grad` between
    steps.
    """
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tracked tensor")
    nodes = _topological(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.grad_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


# ---------------------------------------------------------------- gradient check


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error < self.tol)


def grad_check(
    f: Callable[[], Tensor],
    inputs: Sequence[Tensor] | Tensor,
    step: float = 1e-5,
    tol: float = 1e-4,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward gradients against central finite differences.

    ``f`` rebuilds the scalar output from the current values of ``inputs``.
    The relative error of each entry is ``|a - n| / max(1, |a|, |n|)``.
    ``max_entries`` caps how many coordinates per tensor are probed (chosen
    with a seeded generator); None probes every entry.
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    zero_grad(inputs)
    out = f()
    backward(out)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, tol)
    for k, (t, ga) in enumerate(zip(inputs, analytic)):
        flat = t.data.reshape(-1)
        probe = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            probe = np.sort(rng.choice(flat.size, max_entries, replace=False))
        worst = 0.0
        for i in probe:
            orig = flat[i]
            flat[i] = orig + step
            up = float(f().data)
            flat[i] = orig - step
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = float(ga.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
        report.per_tensor[t.name or f"input{k}"] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    zero_grad(inputs)
    return report
