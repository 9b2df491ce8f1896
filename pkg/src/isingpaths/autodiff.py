"""Small reverse-mode autodiff over float64 numpy arrays.

Every op builds its output eagerly and records a closure that pushes the
output gradient to its parents.  Graphs are rebuilt for every batch.
"""

from __future__ import annotations

import contextlib
from typing import Iterable

import numpy as np

DTYPE = np.float64
_grad_enabled = True


class GraphError(RuntimeError):
    pass


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.value = value if isinstance(value, np.ndarray) and value.dtype == DTYPE else _as_array(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def _accumulate(self, g: np.ndarray) -> None:
        # never mutate in place: g may alias another node's gradient
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __getitem__(self, idx): return getitem(self, idx)

    def sum(self, axis=None, keepdims=False): return tsum(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes or None)


def tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording the graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(value, parents: tuple, backward_fn) -> Tensor:
    if not (_grad_enabled and any(p.requires_grad for p in parents)):
        return Tensor(value)
    return Tensor(value, True, None, parents, backward_fn)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node."""
    if root.value.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}")
    order: list[Tensor] = []
    state: dict[int, int] = {}  # 1 = on stack, 2 = done
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        st = state.get(key)
        if st == 2:
            continue
        if st == 1:
            raise GraphError("cycle detected in computation graph")
        state[key] = 1
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                ps = state.get(id(p))
                if ps == 1:
                    raise GraphError("cycle detected in computation graph")
                if ps is None:
                    stack.append((p, False))
    root._accumulate(np.ones_like(root.value))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# --- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))
    return _make(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))
    return _make(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.value, b.shape))
    return _make(a.value * b.value, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    out = a.value / b.value

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.value, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.value, b.shape))
    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = tensor(a)
    return _make(-a.value, (a,), lambda g: a._accumulate(-g))


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (both operands >= 2-D)."""
    a, b = tensor(a), tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.value, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.value, -1, -2) @ g, b.shape))
    return _make(a.value @ b.value, (a, b), bw)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` with ``x`` of any leading shape and ``w`` of shape (in, out)."""
    x, w = tensor(x), tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"linear shape mismatch: {x.shape} @ {w.shape}")
    lead = x.shape[:-1]
    x2 = x.value.reshape(-1, x.shape[-1])
    out = x2 @ w.value
    if b is not None:
        b = tensor(b)
        out += b.value
    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.value.T).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0).reshape(b.shape))
    return _make(out.reshape(lead + (w.shape[1],)), parents, bw)


# --- unary nonlinearities --------------------------------------------------

def tanh(a) -> Tensor:
    a = tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * (1.0 - out * out)))


def sigmoid(a) -> Tensor:
    a = tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _make(out, (a,), lambda g: a._accumulate(g * out * (1.0 - out)))


def exp(a) -> Tensor:
    a = tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: a._accumulate(g * out))


def log(a) -> Tensor:
    a = tensor(a)
    return _make(np.log(a.value), (a,), lambda g: a._accumulate(g / a.value))


def relu(a) -> Tensor:
    a = tensor(a)
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: a._accumulate(g * mask))


# --- reductions and normalisations -----------------------------------------

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))
    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def softmax(a) -> Tensor:
    """Softmax over the last axis; ``-inf`` entries get zero weight."""
    a = tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))
    return _make(out, (a,), bw)


def log_softmax(a) -> Tensor:
    a = tensor(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))

    def bw(g):
        a._accumulate(g - np.exp(out) * g.sum(axis=-1, keepdims=True))
    return _make(out, (a,), bw)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    x, gain, bias = tensor(x), tensor(gain), tensor(bias)
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def bw(g):
        if gain.requires_grad:
            gain._accumulate(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accumulate(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gx = g * gain.value
            gx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            x._accumulate(gx)
    return _make(out, (x, gain, bias), bw)


def attention(q, k, v, mask=None) -> Tensor:
    """Fused scaled dot-product attention over the last two axes.

    ``mask`` (broadcastable to the (..., Tq, Tk) scores) marks forbidden
    entries, which receive zero weight.  Equivalent to
    ``softmax(masked_fill(q @ k^T / sqrt(d), mask, -inf)) @ v``.
    """
    q, k, v = tensor(q), tensor(k), tensor(v)
    scale = 1.0 / np.sqrt(q.shape[-1])
    s = q.value @ np.swapaxes(k.value, -1, -2)
    s *= scale
    if mask is not None:
        s += np.where(mask, -np.inf, 0.0)
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    w = s

    def bw(g):
        if v.requires_grad:
            v._accumulate(_unbroadcast(np.swapaxes(w, -1, -2) @ g, v.shape))
        if q.requires_grad or k.requires_grad:
            dw = g @ np.swapaxes(v.value, -1, -2)
            ds = w * (dw - (dw * w).sum(axis=-1, keepdims=True))
            ds *= scale
            if q.requires_grad:
                q._accumulate(_unbroadcast(ds @ k.value, q.shape))
            if k.requires_grad:
                k._accumulate(_unbroadcast(np.swapaxes(ds, -1, -2) @ q.value, k.shape))
    return _make(w @ v.value, (q, k, v), bw)


# --- structural ops --------------------------------------------------------

def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, piece in zip(ts, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)
    return _make(np.concatenate([t.value for t in ts], axis=axis), tuple(ts), bw)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [tensor(t) for t in tensors]

    def bw(g):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))
    return _make(np.stack([t.value for t in ts], axis=axis), tuple(ts), bw)


def getitem(a, idx) -> Tensor:
    """Basic slicing (and integer indexing) with scatter-back gradient."""
    a = tensor(a)

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g) if _is_fancy(idx) else full.__setitem__(idx, g)
        a._accumulate(full)
    return _make(a.value[idx], (a,), bw)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    return _make(a.value.reshape(shape), (a,), lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(a.value.transpose(axes), (a,), lambda g: a._accumulate(g.transpose(inv)))


def embedding(table, idx) -> Tensor:
    """Rows of ``table`` selected by the integer array ``idx``."""
    table = tensor(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError("embedding index out of range")

    def bw(g):
        full = np.zeros_like(table.value)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accumulate(full)
    return _make(table.value[idx], (table,), bw)


def masked_fill(a, mask, value: float) -> Tensor:
    """Replace entries where ``mask`` is true with ``value``; no gradient flows there."""
    a = tensor(a)
    mask = np.asarray(mask, dtype=bool)
    np.broadcast_shapes(mask.shape, a.shape)
    out = np.where(mask, value, a.value)
    return _make(out, (a,), lambda g: a._accumulate(_unbroadcast(np.where(mask, 0.0, g), a.shape)))


def pick(a, idx) -> Tensor:
    """``a[..., idx[...]]``: select one entry of the last axis per leading index."""
    a = tensor(a)
    idx = np.asarray(idx)[..., None]
    out = np.take_along_axis(a.value, idx, axis=-1)[..., 0]

    def bw(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, idx, g[..., None], axis=-1)
        a._accumulate(full)
    return _make(out, (a,), bw)


# --- parameters ------------------------------------------------------------

class ParameterSet:
    """Ordered, named collection of trainable leaf tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=DTYPE), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def count(self) -> int:
        return sum(p.value.size for p in self)

    def zero_grad(self) -> None:
        for p in self:
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.value))
                for k, p in self._params.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        if set(snap) != set(self._params):
            raise KeyError("snapshot does not match parameter names")
        for k, p in self._params.items():
            v = np.asarray(snap[k], dtype=DTYPE)
            if v.shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {p.shape}")
            p.value = v.copy()


# --- fused recurrent scan --------------------------------------------------

def _gru_forward(gx_t, h, w_h, b_h, H):
    gh = h @ w_h + b_h
    r = 0.5 * (1.0 + np.tanh(0.5 * (gx_t[:, :H] + gh[:, :H])))
    z = 0.5 * (1.0 + np.tanh(0.5 * (gx_t[:, H:2 * H] + gh[:, H:2 * H])))
    n = np.tanh(gx_t[:, 2 * H:] + r * gh[:, 2 * H:])
    return n + z * (h - n), (gh, r, z, n)


def gru_step(gx_t: np.ndarray, h: np.ndarray, w_h: np.ndarray, b_h: np.ndarray) -> np.ndarray:
    """One gated-recurrent update on plain arrays (inference only)."""
    return _gru_forward(gx_t, h, w_h, b_h, h.shape[-1])[0]


def gru_scan(gx, h0, w_h, b_h) -> Tensor:
    """Run a gated recurrent cell over a whole sequence.

    ``gx`` (B, T, 3H) holds the input projections for the reset, update and
    candidate gates; ``h0`` (H,) is the initial state shared by the batch.
    Returns the hidden states (B, T, H), where entry ``t`` has consumed
    inputs ``0..t``.  Gate equations::

        r = sigmoid(gx_r + h W_r + b_r)
        z = sigmoid(gx_z + h W_z + b_z)
        n = tanh(gx_n + r * (h W_n + b_n))
        h' = (1 - z) * n + z * h
    """
    gx, h0, w_h, b_h = tensor(gx), tensor(h0), tensor(w_h), tensor(b_h)
    B, T, H3 = gx.shape
    H = H3 // 3
    if h0.shape != (H,) or w_h.shape != (H, H3) or b_h.shape != (H3,):
        raise ValueError("gru_scan parameter shapes are inconsistent")
    hs = np.empty((B, T, H))
    cache = []
    h = np.broadcast_to(h0.value, (B, H))
    for t in range(T):
        h_new, c = _gru_forward(gx.value[:, t], h, w_h.value, b_h.value, H)
        cache.append((h,) + c)
        hs[:, t] = h_new
        h = h_new

    def bw(g):
        dgx = np.empty_like(gx.value)
        dW = np.zeros_like(w_h.value)
        db = np.zeros_like(b_h.value)
        dh = np.zeros((B, H))
        dgh = np.empty((B, H3))
        for t in range(T - 1, -1, -1):
            h_prev, gh, r, z, n = cache[t]
            dh = dh + g[:, t]
            dn = dh * (1.0 - z)
            da = dn * (1.0 - n * n)
            dr = da * gh[:, 2 * H:]
            dgh[:, :H] = dr * r * (1.0 - r)
            dgh[:, H:2 * H] = dh * (h_prev - n) * z * (1.0 - z)
            dgh[:, 2 * H:] = da * r
            dgx[:, t, :2 * H] = dgh[:, :2 * H]
            dgx[:, t, 2 * H:] = da
            dW += h_prev.T @ dgh
            db += dgh.sum(axis=0)
            dh = dh * z + dgh @ w_h.value.T
        if gx.requires_grad:
            gx._accumulate(dgx)
        if h0.requires_grad:
            h0._accumulate(dh.sum(axis=0))
        if w_h.requires_grad:
            w_h._accumulate(dW)
        if b_h.requires_grad:
            b_h._accumulate(db)
    return _make(hs, (gx, h0, w_h, b_h), bw)
