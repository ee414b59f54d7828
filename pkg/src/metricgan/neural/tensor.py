"""Array-valued reverse-mode automatic differentiation.

Only the operations the generator, discriminator and losses need are
provided. Every op records its parents and a closure mapping the output
gradient to one gradient per parent; :func:`backward` walks the recorded
graph in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    """A NaN or infinity appeared in an activation or gradient."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out the axes numpy broadcasting added or stretched
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: Sequence["Tensor"] = (), _backward: Callable | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents = tuple(_parents)
        # which parents needed gradients when this node was built; a leaf
        # frozen at that time stays excluded even after it is unfrozen
        self._needs = tuple(p.requires_grad for p in self._parents)
        self._backward = _backward

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, where: str = "activation") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericalError(f"non-finite {where}" + (f" in {self.name}" if self.name else ""))
        return self

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        if exponent != 2:
            raise NotImplementedError("only squaring is supported")
        return square(self)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents: Iterable[Tensor], backward: Callable) -> Tensor:
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _match_dtype(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    # python scalars and constant arrays follow the dtype of the other operand
    if not a.requires_grad and a.data.dtype != b.data.dtype and b.data.dtype.kind == "f":
        a = Tensor(a.data.astype(b.data.dtype))
    elif not b.requires_grad and b.data.dtype != a.data.dtype and a.data.dtype.kind == "f":
        b = Tensor(b.data.astype(a.data.dtype))
    return a, b


def add(a, b) -> Tensor:
    a, b = _match_dtype(as_tensor(a), as_tensor(b))
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _match_dtype(as_tensor(a), as_tensor(b))
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _match_dtype(as_tensor(a), as_tensor(b))
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = _match_dtype(as_tensor(a), as_tensor(b))
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _make(out, (a, b), bw)


def cast(a, dtype) -> Tensor:
    a = as_tensor(a)
    dtype = np.dtype(dtype)
    if a.data.dtype == dtype:
        return a
    src = a.data.dtype
    return _make(a.data.astype(dtype), (a,), lambda g: (g.astype(src),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (np.sign(a.data) * g,))


def matmul(a, b) -> Tensor:
    a, b = _match_dtype(as_tensor(a), as_tensor(b))

    def bw(g):
        if b.ndim == 1:
            ga = np.multiply.outer(g, b.data)
            gb = np.tensordot(a.data, g, axes=(list(range(a.ndim - 1)), list(range(g.ndim))))
            return ga, gb
        ga = g @ np.swapaxes(b.data, -1, -2)
        a2 = a.data.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        gb = a2.T @ g2
        return ga, gb

    if b.ndim > 2:
        raise NotImplementedError("right operand must be a vector or matrix")
    return _make(a.data @ b.data, (a, b), bw)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def rows(a, start: int, stop: int) -> Tensor:
    """a[start:stop] along the first axis."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _make(a.data[start:stop], (a,), bw)


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return _make(a.data * scale, (a,), lambda g: (g * scale,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def log1p(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g / (2.0 * out),))


def clip_min(a, floor: float) -> Tensor:
    """max(a, floor); the gradient is zero where the floor is active."""
    a = as_tensor(a)
    keep = a.data >= floor
    return _make(np.where(keep, a.data, a.data.dtype.type(floor)), (a,), lambda g: (g * keep,))


def conv2d(x, w) -> Tensor:
    """Valid, stride-1 2-D convolution in channels-last layout.

    x: (B, H, W, C_in); w: (kh, kw, C_in, C_out) -> (B, H-kh+1, W-kw+1, C_out).
    """
    x, w = _match_dtype(as_tensor(x), as_tensor(w))
    kh, kw, cin, cout = w.shape
    B, H, W, C = x.shape
    if C != cin:
        raise ValueError(f"conv2d: input has {C} channels, kernel expects {cin}")
    Ho, Wo = H - kh + 1, W - kw + 1
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: input {H}x{W} smaller than kernel {kh}x{kw}")
    # the kw horizontal shifts are stacked on the channel axis once, so each kernel row is
    # one contiguous (Ho*Wo, kw*cin) @ (kw*cin, cout) product per batch item
    K = kw * cin
    patches = np.concatenate([x.data[:, :, j:j + Wo, :] for j in range(kw)], axis=-1)
    wk = w.data.reshape(kh, K, cout)
    out = np.zeros((B, Ho, Wo, cout), dtype=np.result_type(x.data, w.data))
    for b in range(B):
        acc = out[b].reshape(-1, cout)
        for i in range(kh):
            acc += patches[b, i:i + Ho].reshape(-1, K) @ wk[i]

    def bw(g):
        gp = np.zeros_like(patches) if x.requires_grad else None
        gw = np.zeros_like(wk) if w.requires_grad else None
        for b in range(B):
            gb = g[b].reshape(-1, cout)
            for i in range(kh):
                if gp is not None:
                    gp[b, i:i + Ho] += (gb @ wk[i].T).reshape(Ho, Wo, K)
                if gw is not None:
                    gw[i] += patches[b, i:i + Ho].reshape(-1, K).T @ gb
        gx = None
        if gp is not None:
            gx = np.zeros_like(x.data)
            for j in range(kw):
                gx[:, :, j:j + Wo, :] += gp[..., j * cin:(j + 1) * cin]
        return gx, (None if gw is None else gw.reshape(w.shape))

    return _make(out, (x, w), bw)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p, need in zip(node._parents, node._needs):
            if need and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params=None) -> dict[str, np.ndarray]:
    """Back-propagate from a scalar ``loss``.

    Named leaves receive ``.grad``. The returned mapping holds one gradient per
    named leaf; when ``params`` (a ParamSet or mapping of name -> Tensor) is
    given, unreachable entries get zero gradients.
    """
    if loss.size != 1:
        raise ValueError("backward needs a scalar loss")
    grads: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        acc = {id(loss): np.ones_like(loss.data)}
        for node in reversed(_topological(loss)):
            g = acc.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g
                if node.name is not None:
                    if not np.all(np.isfinite(g)):
                        raise NumericalError(f"non-finite gradient for parameter {node.name}")
                    grads[node.name] = grads[node.name] + g if node.name in grads else g
                continue
            for parent, need, pg in zip(node._parents, node._needs, node._backward(g)):
                if pg is None or not need:
                    continue
                key = id(parent)
                acc[key] = acc[key] + pg if key in acc else pg
    if params is not None:
        tensors = params.tensors() if hasattr(params, "tensors") else params
        for name, t in tensors.items():
            if name not in grads:
                grads[name] = np.zeros_like(t.data)
    return grads
