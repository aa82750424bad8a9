"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps a row-major float array (float32 by default; float64
is supported so finite-difference verification has headroom) and records the
operations that produced it. Calling :meth:`Tensor.backward` on a scalar
walks the graph in reverse topological order and accumulates gradients into
every tensor created with ``requires_grad=True``.

Only the operations the segmenter needs exist here; each op pairs a numpy
forward with a hand-written vector-Jacobian product.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

FLOAT_DTYPES = (np.float32, np.float64)

# When enabled, every op asserts its output is finite. Off by default;
# attention and the loss keep their own unconditional guards.
CHECK_FINITE = False


class AutodiffError(RuntimeError):
    pass


def _as_array(data, dtype):
    # order="C" (not ascontiguousarray) so 0-d scalars stay 0-d
    return np.asarray(data, dtype=dtype, order="C")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise AutodiffError("tensor/tensor division is not supported")
        return scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> np.ndarray:
        return self.data

    def backward(self):
        """Reverse-mode sweep seeded with d(self)/d(self) = 1."""
        if self.data.ndim != 0:
            raise AutodiffError("backward needs a scalar (call it on the loss)")
        if not self._parents and not self.requires_grad:
            raise AutodiffError("backward before forward: no recorded computation")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones((), dtype=self.data.dtype)
        for node in reversed(order):
            if node._vjp is not None and node.grad is not None:
                node._vjp(node.grad)


def _needs_graph(*tensors) -> bool:
    return any(t.requires_grad or t._parents for t in tensors)


def _make(data, parents, vjp) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    if _needs_graph(*parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    else:
        out._parents = ()
        out._vjp = None
    if CHECK_FINITE and not np.isfinite(data).all():
        raise AutodiffError("non-finite values produced by an operation")
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = g.astype(t.data.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def constant(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


# -- arithmetic --------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def vjp(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), vjp)


def scale(a: Tensor, s: float) -> Tensor:
    data = a.data * a.data.dtype.type(s)

    def vjp(g):
        _accumulate(a, g * a.data.dtype.type(s))

    return _make(data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(data, (a, b), vjp)


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def vjp(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape))

    return _make(np.asarray(data), (a,), vjp)


# -- shape surgery -----------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def vjp(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(data, (a,), vjp)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(a.data.transpose(axes))
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        _accumulate(a, g.transpose(inverse))

    return _make(data, (a,), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = np.ascontiguousarray(a.data[index])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _make(data, (a,), vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def vjp(g):
        offset = 0
        for t, size in zip(tensors, sizes):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offset, offset + size)
            _accumulate(t, g[tuple(index)])
            offset += size

    return _make(data, tuple(tensors), vjp)


def stack(tensors) -> Tensor:
    tensors = list(tensors)
    data = np.stack([t.data for t in tensors], axis=0)

    def vjp(g):
        for i, t in enumerate(tensors):
            _accumulate(t, g[i])

    return _make(data, tuple(tensors), vjp)


def gather(a: Tensor, index: np.ndarray) -> Tensor:
    """Row gather: ``a`` is (N, C); returns ``index.shape + (C,)``.

    The same rows may be picked repeatedly; the backward pass scatter-adds,
    which is what makes replicate-padded convolutions and window reuse exact.
    """
    if a.data.ndim != 2:
        raise AutodiffError("gather expects a 2-D (rows, channels) tensor")
    index = np.asarray(index, dtype=np.int64)
    data = a.data[index.reshape(-1)].reshape(index.shape + (a.data.shape[1],))

    def vjp(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, index.reshape(-1), g.reshape(-1, a.data.shape[1]))
        _accumulate(a, acc)

    return _make(np.ascontiguousarray(data), (a,), vjp)


def pad_hw(a: Tensor, bottom: int, right: int) -> Tensor:
    """Zero-pad a (H, W, C) tensor on its bottom/right spatial edges."""
    if bottom == 0 and right == 0:
        return a
    data = np.pad(a.data, ((0, bottom), (0, right), (0, 0)))
    h, w = a.data.shape[:2]

    def vjp(g):
        _accumulate(a, np.ascontiguousarray(g[:h, :w]))

    return _make(data, (a,), vjp)


def crop_hw(a: Tensor, height: int, width: int) -> Tensor:
    if a.data.shape[0] == height and a.data.shape[1] == width:
        return a
    data = np.ascontiguousarray(a.data[:height, :width])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:height, :width] = g
        _accumulate(a, full)

    return _make(data, (a,), vjp)


# -- nonlinearities and normalization ----------------------------------------

def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def vjp(g):
        _accumulate(a, g * (a.data > 0))

    return _make(data, (a,), vjp)


def gelu(a: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / x.dtype.type(math.sqrt(2.0))))
    data = x * cdf

    def vjp(g):
        pdf = np.exp(-0.5 * x * x) * x.dtype.type(1.0 / math.sqrt(2.0 * math.pi))
        _accumulate(a, g * (cdf + x * pdf))

    return _make(data.astype(x.dtype, copy=False), (a,), vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accumulate(a, data * (g - dot))

    return _make(data, (a,), vjp)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis, then scale and shift per channel."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    data = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def vjp(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(beta, g.sum(axis=reduce_axes))
        _accumulate(gamma, (g * xhat).sum(axis=reduce_axes))
        dxhat = g * gamma.data
        term = dxhat.sum(axis=-1, keepdims=True) + xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        _accumulate(a, (dxhat - term / x.dtype.type(n)) * inv)

    return _make(data, (a, gamma, beta), vjp)


# -- loss ---------------------------------------------------------------------

def weighted_cross_entropy(logits: Tensor, labels: np.ndarray, weights: np.ndarray,
                           ignore_index: int = 255) -> Tensor:
    """Class-weighted softmax cross entropy, normalized by the applied weights.

    loss = sum_valid w[y] * (-log softmax(logit)[y]) / sum_valid w[y].
    Pixels labeled ``ignore_index`` contribute nothing to value or gradient.
    Scaling all weights by a positive constant leaves both unchanged.
    """
    num_classes = logits.data.shape[-1]
    labels = np.asarray(labels)
    if labels.shape != logits.data.shape[:-1]:
        raise AutodiffError("labels shape does not match logits")
    flat_logits = logits.data.reshape(-1, num_classes)
    flat_labels = labels.reshape(-1).astype(np.int64)
    valid = flat_labels != ignore_index
    if not valid.any():
        raise AutodiffError("all pixels are ignored; loss undefined")
    y = flat_labels[valid]
    if (y < 0).any() or (y >= num_classes).any():
        bad = int(flat_labels[valid][(y < 0) | (y >= num_classes)][0])
        raise AutodiffError(f"label {bad} outside 0..{num_classes - 1}")

    dtype = logits.data.dtype
    w = np.asarray(weights, dtype=dtype)
    z = flat_logits[valid]
    z_shift = z - z.max(axis=1, keepdims=True)
    log_den = np.log(np.exp(z_shift).sum(axis=1))
    logp_y = z_shift[np.arange(z.shape[0]), y] - log_den
    wy = w[y]
    den = wy.sum()
    loss = np.asarray((wy * -logp_y).sum() / den, dtype=dtype)
    if not np.isfinite(loss):
        raise AutodiffError("non-finite loss")

    def vjp(g):
        p = np.exp(z_shift - log_den[:, None])
        p[np.arange(z.shape[0]), y] -= 1.0
        dvalid = p * (wy / den)[:, None]
        full = np.zeros_like(flat_logits)
        full[valid] = dvalid
        _accumulate(logits, (g * full).reshape(logits.data.shape))

    return _make(loss, (logits,), vjp)


# -- parameter helpers ---------------------------------------------------------

def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def gradients(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Run backward from ``loss`` and collect one gradient per parameter.

    Parameters that do not influence the loss get zero gradients.
    """
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


def assert_finite(t: Tensor, context: str) -> Tensor:
    if not np.isfinite(t.data).all():
        raise AutodiffError(f"non-finite intermediate in {context}")
    return t
