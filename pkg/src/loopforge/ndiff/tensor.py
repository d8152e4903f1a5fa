"""Dense fp64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a float64 ndarray. Every op returns a new Tensor whose
backward closure knows how to push the output gradient onto its parents;
calling ``backward()`` on a scalar loss walks the recorded graph in reverse
topological order. The graph is rebuilt on every forward pass and never
reused. Gradients accumulate, so values used twice receive both
contributions; optimizers are expected to zero grads between steps.
"""

from __future__ import annotations

import numpy as np

_DEBUG = False


def set_debug(flag: bool) -> None:
    """Enable NaN/Inf checks on every op output (slow; for tests)."""
    global _DEBUG
    _DEBUG = bool(flag)


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every reachable tensor with requires_grad."""
        if self.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
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
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # small operator surface; everything else is a module-level function
    def __add__(self, other):
        return add(self, _lift(other))

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(name: str, data: np.ndarray) -> None:
    if _DEBUG and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{name}: non-finite values in output")


def _node(name: str, data: np.ndarray, parents, backward) -> Tensor:
    _check_finite(name, data)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} not broadcastable")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _node("add", data, (a, b), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} not broadcastable")

    def bw(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _node("sub", data, (a, b), bw)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} not broadcastable")

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _node("mul", data, (a, b), bw)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bw(g):
        _accum(a, g * s)

    return _node("scale", a.data * s, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 1 or b.data.ndim < 1 or a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} not conformable")
    data = a.data @ b.data

    def bw(g):
        _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node("matmul", data, (a, b), bw)


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    # derivative at exactly 0 is the negative slope (deterministic tie-break)
    deriv = np.where(a.data > 0.0, 1.0, slope)
    data = np.where(a.data > 0.0, a.data, a.data * slope)

    def bw(g):
        _accum(a, g * deriv)

    return _node("leaky_relu", data, (a,), bw)


_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(a: Tensor) -> Tensor:
    # keep outputs strictly inside (0, 1); fp64 saturates past |x| ~ 37
    data = np.clip(_sigmoid_np(a.data), _SIG_LO, _SIG_HI)

    def bw(g):
        _accum(a, g * data * (1.0 - data))

    return _node("sigmoid", data, (a,), bw)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        _accum(a, g * (1.0 - data * data))

    return _node("tanh", data, (a,), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * data)

    return _node("softmax", data, (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    data = a.data.mean(axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(np.asarray(g) / count, a.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy())

    return _node("mean", data, (a,), bw)


def tsum(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.shape).copy())
        else:
            _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _node("sum", data, (a,), bw)


def sum_squares(a: Tensor) -> Tensor:
    data = np.asarray((a.data * a.data).sum())

    def bw(g):
        _accum(a, 2.0 * g * a.data)

    return _node("sum_squares", data, (a,), bw)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def bw(g):
        _accum(a, g.reshape(a.shape))

    return _node("reshape", data, (a,), bw)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    data = a.data.transpose(axes)

    def bw(g):
        _accum(a, g.transpose(inv))

    return _node("permute", data, (a,), bw)


def slice_cols(a: Tensor, lo: int, hi: int) -> Tensor:
    """Columns [lo, hi) of a 2-D tensor."""
    data = a.data[:, lo:hi]

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        _accum(a, full)

    return _node("slice_cols", data, (a,), bw)


def stack0(tensors) -> Tensor:
    """Stack same-shaped tensors along a new leading axis."""
    tensors = tuple(tensors)
    data = np.stack([t.data for t in tensors])

    def bw(g):
        for i, t in enumerate(tensors):
            _accum(t, g[i])

    return _node("stack0", data, tensors, bw)


def straight_through(a: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``; backward passes the gradient to ``a`` unchanged."""
    if a.shape != value.shape:
        raise ShapeError(f"straight_through: shapes {a.shape} and {value.shape} differ")

    def bw(g):
        _accum(a, g)

    return _node("straight_through", np.asarray(value, dtype=np.float64), (a,), bw)


# ---------------------------------------------------------------------------
# convolution kernels (time axis last, channels-first layout)

def _conv1d_forward_np(x, w, b, stride, padding):
    bsz, cin, length = x.shape
    cout, cin_w, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv1d: input channels {cin} != weight channels {cin_w}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else x
    lout = (length + 2 * padding - k) // stride + 1
    if lout < 1:
        raise ShapeError(f"conv1d: kernel {k} too large for padded length {length + 2 * padding}")
    cols = np.empty((bsz, cin, k, lout), dtype=np.float64)
    for j in range(k):
        cols[:, :, j, :] = xp[:, :, j : j + stride * (lout - 1) + 1 : stride]
    w2 = w.reshape(cout, cin * k)
    out = w2 @ cols.reshape(bsz, cin * k, lout)
    if b is not None:
        out = out + b[:, None]
    return out, cols, xp.shape[-1]


def conv1d_forward(x: np.ndarray, w: np.ndarray, b, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Plain-ndarray 1-D convolution (no tape); shared by inference paths."""
    out, _, _ = _conv1d_forward_np(np.asarray(x, np.float64), np.asarray(w, np.float64),
                                   None if b is None else np.asarray(b, np.float64), stride, padding)
    return out


def conv1d(x: Tensor, w: Tensor, b, stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution; x (B, Cin, L), w (Cout, Cin, k), b (Cout,) or None."""
    bias = b.data if b is not None else None
    data, cols, lpad = _conv1d_forward_np(x.data, w.data, bias, stride, padding)
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    lout = data.shape[-1]

    def bw(g):
        w2 = w.data.reshape(cout, cin * k)
        g2 = g.transpose(1, 0, 2).reshape(cout, bsz * lout)
        gcols = (w2.T @ g2).reshape(cin, k, bsz, lout)
        gxp = np.zeros((bsz, cin, lpad), dtype=np.float64)
        for j in range(k):
            gxp[:, :, j : j + stride * (lout - 1) + 1 : stride] += gcols[:, j].transpose(1, 0, 2)
        gx = gxp[:, :, padding : lpad - padding] if padding else gxp
        _accum(x, gx)
        cols2 = cols.transpose(1, 2, 0, 3).reshape(cin * k, bsz * lout)
        _accum(w, (g2 @ cols2.T).reshape(cout, cin, k))
        if b is not None:
            _accum(b, g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _node("conv1d", data, parents, bw)


def _conv_transpose1d_forward_np(x, w, b, stride, padding):
    bsz, cin, length = x.shape
    cin_w, cout, k = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv_transpose1d: input channels {cin} != weight channels {cin_w}")
    lfull = (length - 1) * stride + k
    x2 = x.transpose(1, 0, 2).reshape(cin, bsz * length)
    prod = (w.reshape(cin, cout * k).T @ x2).reshape(cout, k, bsz, length)
    out_full = np.zeros((bsz, cout, lfull), dtype=np.float64)
    for j in range(k):
        out_full[:, :, j : j + stride * (length - 1) + 1 : stride] += prod[:, j].transpose(1, 0, 2)
    out = out_full[:, :, padding : lfull - padding] if padding else out_full
    if out.shape[-1] < 1:
        raise ShapeError(f"conv_transpose1d: padding {padding} exceeds output length {lfull}")
    if b is not None:
        out = out + b[:, None]
    return out, lfull


def conv_transpose1d_forward(x, w, b, stride: int = 1, padding: int = 0) -> np.ndarray:
    out, _ = _conv_transpose1d_forward_np(np.asarray(x, np.float64), np.asarray(w, np.float64),
                                          None if b is None else np.asarray(b, np.float64), stride, padding)
    return out


def conv_transpose1d(x: Tensor, w: Tensor, b, stride: int = 1, padding: int = 0) -> Tensor:
    """Transposed 1-D convolution; x (B, Cin, L), w (Cin, Cout, k)."""
    bias = b.data if b is not None else None
    data, lfull = _conv_transpose1d_forward_np(x.data, w.data, bias, stride, padding)
    bsz, cin, length = x.shape
    _, cout, k = w.shape

    def bw(g):
        gfull = np.zeros((bsz, cout, lfull), dtype=np.float64)
        if padding:
            gfull[:, :, padding : lfull - padding] = g
        else:
            gfull[:] = g
        gslabs = np.empty((cout, k, bsz, length), dtype=np.float64)
        for j in range(k):
            gslabs[:, j] = gfull[:, :, j : j + stride * (length - 1) + 1 : stride].transpose(1, 0, 2)
        g2 = gslabs.reshape(cout * k, bsz * length)
        gx = (w.data.reshape(cin, cout * k) @ g2).reshape(cin, bsz, length).transpose(1, 0, 2)
        _accum(x, gx)
        x2 = x.data.transpose(1, 0, 2).reshape(cin, bsz * length)
        _accum(w, (x2 @ g2.T).reshape(cin, cout, k))
        if b is not None:
            _accum(b, g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return _node("conv_transpose1d", data, parents, bw)


# ---------------------------------------------------------------------------
# lookup and fused losses

def embedding(table: Tensor, indices) -> Tensor:
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"embedding: index out of range for table of {table.shape[0]} rows")
    data = table.data[idx]

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        _accum(table, gt)

    return _node("embedding", data, (table,), bw)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def bce_with_logits_mean(logits: Tensor, targets: np.ndarray, clamp: float = 30.0) -> Tensor:
    """Mean binary cross-entropy from logits against 0/1 targets.

    Logits are clamped to ±clamp before the loss; the clamp is treated as
    pass-through in the backward pass.
    """
    y = np.asarray(targets, dtype=np.float64)
    if logits.shape != y.shape:
        raise ShapeError(f"bce: logits {logits.shape} vs targets {y.shape}")
    o = np.clip(logits.data, -clamp, clamp)
    loss = np.maximum(o, 0.0) - o * y + np.log1p(np.exp(-np.abs(o)))
    data = np.asarray(loss.mean())
    n = y.size
    probs = _sigmoid_np(o)

    def bw(g):
        _accum(logits, g * (probs - y) / n)

    return _node("bce_with_logits", data, (logits,), bw)


def cross_entropy_mean(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer targets under softmax(logits)."""
    idx = np.asarray(targets)
    if logits.data.ndim != 2 or idx.ndim != 1 or idx.shape[0] != logits.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {idx.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = idx.shape[0]
    data = np.asarray((lse - z[np.arange(n), idx]).mean())

    def bw(g):
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        _accum(logits, g * p / n)

    return _node("cross_entropy", data, (logits,), bw)
