"""Reverse-mode autodiff over numpy arrays.

A :class:`Tensor` records the op that produced it; :meth:`Tensor.backward`
walks the graph in reverse topological order. Every op checks its output for
NaN/Inf and raises :class:`~memnav.errors.NonFiniteError`.
"""
from __future__ import annotations

import contextlib
import threading

import numpy as np

from memnav.errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float64

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference / frozen modules)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite value produced by {op}")
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or (data.dtype if isinstance(data, np.ndarray)
                                               and data.dtype.kind == "f" else DEFAULT_DTYPE))
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"

    # -- construction -------------------------------------------------------
    @staticmethod
    def _make(data, parents, backward, op):
        out = Tensor(_check(data, op))
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
            out.op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    # -- backward -----------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != value shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.data.shape:
                    raise ShapeError(f"{node.op}: gradient shape {pg.shape} != {parent.data.shape}")
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic ---------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, k):
        return power(self, k)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data + b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data - b.data, (a, b),
                        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._make(a.data * b.data, (a, b),
                        lambda g: (_unbroadcast(g * b.data, a.shape),
                                   _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data
    return Tensor._make(out, (a, b),
                        lambda g: (_unbroadcast(g / b.data, a.shape),
                                   _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def power(a, k: float):
    a = as_tensor(a)
    return Tensor._make(a.data ** k, (a,), lambda g: (g * k * a.data ** (k - 1),), "pow")


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return Tensor._make(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return Tensor._make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return Tensor._make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def absolute(a):
    a = as_tensor(a)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clip(a, lo, hi):
    """Clamp; the gradient is zero wherever the bound is active."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    mask = (a.data > lo) & (a.data < hi)
    return Tensor._make(out, (a,), lambda g: (g * mask,), "clip")


def maximum(a, floor: float):
    """``max(a, floor)`` against a constant; gradient passes where ``a > floor``."""
    a = as_tensor(a)
    mask = a.data > floor
    return Tensor._make(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "maximum")


def minimum(a, b):
    """Elementwise min of two tensors; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return Tensor._make(np.where(pick_a, a.data, b.data), (a, b),
                        lambda g: (_unbroadcast(g * pick_a, a.shape),
                                   _unbroadcast(g * ~pick_a, b.shape)), "minimum")


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._make(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else tuple(np.argsort(axes))
    return Tensor._make(np.transpose(a.data, axes), (a,),
                        lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)

    basic = _is_basic_index(idx)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor._make(np.array(a.data[idx]), (a,), back, "getitem")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return Tensor._make(np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                        lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    return Tensor._make(np.stack([t.data for t in ts], axis=axis), tuple(ts),
                        lambda g: tuple(np.moveaxis(g, axis, 0)), "stack")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if a.ndim > 1 else np.multiply.outer(a.data, g)
        return ga, gb

    if a.ndim < 2 and b.ndim < 2:
        raise ShapeError("matmul needs at least one operand with ndim >= 2")
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    return Tensor._make(a.data @ b.data, (a, b), back, "matmul")


# ---------------------------------------------------------------------------
# convolution (1-D, NCL layout)


def _windows(xp: np.ndarray, k: int, stride: int, n_out: int) -> np.ndarray:
    """``(B, C, n_out, k)`` strided view of padded input."""
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    return win[:, :, : stride * (n_out - 1) + 1 : stride, :]


def _scatter_windows(cols: np.ndarray, length: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum ``(B, C, n, k)`` windows into length ``length``."""
    bsz, ch, n, k = cols.shape
    out = np.zeros((bsz, ch, length), dtype=cols.dtype)
    for j in range(k):
        out[:, :, j : j + stride * (n - 1) + 1 : stride] += cols[:, :, :, j]
    return out


def conv1d(x, w, b=None, stride: int = 1, padding: int = 0):
    """Cross-correlation. ``x``: (B, Cin, L); ``w``: (Cout, Cin, K); ``b``: (Cout,)."""
    x, w = as_tensor(x), as_tensor(w)
    bsz, cin, length = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d channel mismatch {x.shape} vs {w.shape}")
    lp = length + 2 * padding
    n_out = (lp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    cols = _windows(xp, k, stride, n_out)  # B, Cin, n, K
    colmat = cols.transpose(0, 2, 1, 3).reshape(bsz * n_out, cin * k)
    wmat = w.data.reshape(cout, cin * k)
    out = (colmat @ wmat.T).reshape(bsz, n_out, cout).transpose(0, 2, 1)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + parents[2].data[None, :, None]

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * n_out, cout)
        gw = (g2.T @ colmat).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(bsz, n_out, cin, k).transpose(0, 2, 1, 3)
        gxp = _scatter_windows(gcols, lp, stride)
        gx = gxp[:, :, padding : padding + length] if padding else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._make(np.ascontiguousarray(out), parents, back, "conv1d")


def conv_transpose1d(x, w, b=None, stride: int = 1, padding: int = 0):
    """Transposed convolution. ``x``: (B, Cin, L); ``w``: (Cin, Cout, K)."""
    x, w = as_tensor(x), as_tensor(w)
    bsz, cin, length = x.shape
    cin_w, cout, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv_transpose1d channel mismatch {x.shape} vs {w.shape}")
    full = (length - 1) * stride + k
    out_len = full - 2 * padding
    xmat = x.data.transpose(0, 2, 1).reshape(bsz * length, cin)
    wmat = w.data.reshape(cin, cout * k)
    cols = (xmat @ wmat).reshape(bsz, length, cout, k).transpose(0, 2, 1, 3)
    out = _scatter_windows(cols, full, stride)[:, :, padding : padding + out_len]
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    if b is not None:
        out = out + parents[2].data[None, :, None]

    def back(g):
        gfull = np.pad(g, ((0, 0), (0, 0), (padding, padding))) if padding else g
        gcols = _windows(gfull, k, stride, length)  # B, Cout, L, K
        gcolmat = gcols.transpose(0, 2, 1, 3).reshape(bsz * length, cout * k)
        gx = (gcolmat @ wmat.T).reshape(bsz, length, cin).transpose(0, 2, 1)
        gw = (xmat.T @ gcolmat).reshape(w.shape)
        grads = [np.ascontiguousarray(gx), gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2)))
        return tuple(grads)

    return Tensor._make(np.ascontiguousarray(out), parents, back, "conv_transpose1d")


# ---------------------------------------------------------------------------
# fused LSTM cell


def lstm_cell(x, h, c, w_ih, w_hh, bias):
    """One LSTM step with gate order (input, forget, candidate, output).

    ``x``: (B, In); ``h``, ``c``: (B, H); ``w_ih``: (In, 4H); ``w_hh``: (H, 4H);
    ``bias``: (4H,). Returns ``(h_new, c_new)``.
    """
    x, h, c, w_ih, w_hh, bias = map(as_tensor, (x, h, c, w_ih, w_hh, bias))
    hid = h.shape[-1]
    if w_ih.shape != (x.shape[-1], 4 * hid) or w_hh.shape != (hid, 4 * hid):
        raise ShapeError(f"lstm weight shapes {w_ih.shape}, {w_hh.shape} do not match input/hidden")
    z = x.data @ w_ih.data + h.data @ w_hh.data + bias.data
    i = _sigmoid(z[..., :hid])
    f = _sigmoid(z[..., hid:2 * hid])
    gg = np.tanh(z[..., 2 * hid:3 * hid])
    o = _sigmoid(z[..., 3 * hid:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc
    def joint(gh, gc):
        gc_total = gc + gh * o * (1.0 - tc * tc)
        dz = np.empty_like(z)
        dz[..., :hid] = gc_total * gg * i * (1.0 - i)
        dz[..., hid:2 * hid] = gc_total * c.data * f * (1.0 - f)
        dz[..., 2 * hid:3 * hid] = gc_total * i * (1.0 - gg * gg)
        dz[..., 3 * hid:] = gh * tc * o * (1.0 - o)
        return (dz @ w_ih.data.T, dz @ w_hh.data.T, gc_total * f,
                x.data.T @ dz, h.data.T @ dz, dz.sum(axis=0))

    parents = (x, h, c, w_ih, w_hh, bias)
    state = Tensor._make(np.concatenate([h_new, c_new], axis=-1), parents,
                         lambda g: joint(g[..., :hid], g[..., hid:]), "lstm_cell")
    return state[..., :hid], state[..., hid:]
