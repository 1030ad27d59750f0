"""Dense-tensor math with reverse-mode differentiation.

Every primitive computes its value eagerly on numpy arrays and, when
gradients are enabled, records a closure that propagates the upstream
gradient to its inputs. ``Tensor.backward()`` walks the recorded graph once
in reverse topological order. The graph is rebuilt on every forward pass
(define-by-run), so time-unrolled networks of any depth need no special
handling.

Training defaults to single precision; tests that compare against finite
differences switch to double via ``double_precision()``.
"""

from __future__ import annotations

import contextlib

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested op."""


class GraphError(RuntimeError):
    """backward() called on a tensor with no recorded forward pass."""


class NumericsError(FloatingPointError):
    """A forward value became NaN/Inf where finite values are required."""


_default_dtype = np.dtype(np.float32)
_grad_enabled = True


def default_dtype():
    return _default_dtype


def set_default_dtype(dtype):
    global _default_dtype
    _default_dtype = np.dtype(dtype)


@contextlib.contextmanager
def double_precision():
    """Run the enclosed block with float64 as the construction default."""
    global _default_dtype
    saved = _default_dtype
    _default_dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _default_dtype = saved


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (eval / stored targets)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


def grad_enabled():
    return _grad_enabled


class Tensor:
    """A dense array plus an optional gradient accumulator.

    ``data`` is always a numpy floating array. Non-float input is cast to
    the construction default dtype; float ndarrays keep their dtype so that
    double-precision checks stay double end to end.
    """

    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, (np.ndarray, np.generic)):
            arr = np.asarray(data)
            if dtype is not None:
                arr = arr.astype(dtype, copy=False)
            elif not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(_default_dtype)
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else _default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._prev = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def check_finite(self, what="tensor"):
        if not np.all(np.isfinite(self.data)):
            raise NumericsError(f"{what} contains NaN/Inf values")
        return self

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        Repeated calls keep accumulating until grads are zeroed.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward() requires a scalar loss, got shape {self.data.shape}"
            )
        if not self._prev:
            raise GraphError(
                "backward() called before a recorded forward pass produced this tensor"
            )
        # Iterative post-order: unrolled graphs can exceed the recursion limit.
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        # Interior nodes hold scratch gradients only; leaves accumulate
        # across repeated backward calls until explicitly zeroed.
        for node in topo:
            if node._prev:
                node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # Operator sugar delegates to the module-level primitives.
    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other, self.dtype))

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self.dtype))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other, self.dtype))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _wrap(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else _default_dtype))


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def record_op(data, parents, backward):
    """Wrap an op result, attaching the VJP closure when recording is on.

    Extension hook used by the spiking and alignment primitives; ``backward``
    reads ``out.grad`` and accumulates into each parent via its own logic.
    """
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = tuple(parents)
        out._backward = backward
        return out, True
    return out, False


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    out, rec = record_op(a.data + b.data, (a, b), None)
    if rec:
        def backward():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = backward
    return out


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    out, rec = record_op(a.data - b.data, (a, b), None)
    if rec:
        def backward():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(-out.grad, b.data.shape))
        out._backward = backward
    return out


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    out, rec = record_op(a.data * b.data, (a, b), None)
    if rec:
        def backward():
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = backward
    return out


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    out, rec = record_op(a.data / b.data, (a, b), None)
    if rec:
        def backward():
            _accum(a, _unbroadcast(out.grad / b.data, a.data.shape))
            _accum(b, _unbroadcast(-out.grad * a.data / (b.data * b.data), b.data.shape))
        out._backward = backward
    return out


def neg(a):
    out, rec = record_op(-a.data, (a,), None)
    if rec:
        def backward():
            _accum(a, -out.grad)
        out._backward = backward
    return out


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: expected 2-D operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    out, rec = record_op(a.data @ b.data, (a, b), None)
    if rec:
        def backward():
            _accum(a, out.grad @ b.data.T)
            _accum(b, a.data.T @ out.grad)
        out._backward = backward
    return out


def relu(a):
    out, rec = record_op(np.maximum(a.data, 0), (a,), None)
    if rec:
        def backward():
            _accum(a, out.grad * (a.data > 0))
        out._backward = backward
    return out


def _expand_reduced(g, shape, axis):
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    axes = tuple(ax % len(shape) for ax in axes)
    g_shape = [1 if i in axes else s for i, s in enumerate(shape)]
    return np.broadcast_to(g.reshape(g_shape), shape)


def tsum(a, axis=None, keepdims=False):
    out, rec = record_op(a.data.sum(axis=axis, keepdims=keepdims), (a,), None)
    if rec:
        def backward():
            g = out.grad
            if not keepdims:
                g = _expand_reduced(g, a.data.shape, axis)
            else:
                g = np.broadcast_to(g, a.data.shape)
            _accum(a, g)
        out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False):
    out, rec = record_op(a.data.mean(axis=axis, keepdims=keepdims), (a,), None)
    if rec:
        count = a.data.size // max(out.data.size, 1)
        def backward():
            g = out.grad / count
            if not keepdims:
                g = _expand_reduced(g, a.data.shape, axis)
            else:
                g = np.broadcast_to(g, a.data.shape)
            _accum(a, g)
        out._backward = backward
    return out


def reshape(a, shape):
    out, rec = record_op(a.data.reshape(shape), (a,), None)
    if rec:
        def backward():
            _accum(a, out.grad.reshape(a.data.shape))
        out._backward = backward
    return out


def getitem(a, idx):
    """Basic (slice/int) indexing; fancy indexing is not supported."""
    out, rec = record_op(a.data[idx], (a,), None)
    if rec:
        def backward():
            g = np.zeros_like(a.data)
            g[idx] += out.grad
            _accum(a, g)
        out._backward = backward
    return out


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out, rec = record_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if rec:
        sizes = [t.data.shape[axis] for t in tensors]
        offsets = np.cumsum([0] + sizes)
        def backward():
            index = [slice(None)] * out.grad.ndim
            for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
                index[axis] = slice(start, stop)
                _accum(t, out.grad[tuple(index)])
        out._backward = backward
    return out


def stack(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    out, rec = record_op(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), None)
    if rec:
        def backward():
            for i, t in enumerate(tensors):
                _accum(t, np.take(out.grad, i, axis=axis))
        out._backward = backward
    return out


def conv2d(x, w, stride=1, padding=0):
    """2-D cross-correlation: x [N,C,H,W] with filters w [F,C,KH,KW].

    im2col forward; backward recomputes the patch view from the saved
    padded input rather than keeping the column matrix alive.
    """
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input/filters, got {x.data.shape}, {w.data.shape}")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"conv2d: channel mismatch: input {x.data.shape} vs filters {w.data.shape}"
        )
    n, c, h, wd = x.data.shape
    f, _, kh, kw = w.data.shape
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: spatial dims {h}x{wd} (pad {padding}) smaller than kernel {kh}x{kw}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride, :, :]  # [N,C,OH,OW,KH,KW]
    oh, ow = windows.shape[2], windows.shape[3]
    val = np.tensordot(windows, w.data, axes=([1, 4, 5], [1, 2, 3]))  # [N,OH,OW,F]
    val = np.ascontiguousarray(val.transpose(0, 3, 1, 2))
    out, rec = record_op(val, (x, w), None)
    if rec:
        def backward():
            g = out.grad  # [N,F,OH,OW]
            if w.requires_grad:
                win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
                win = win[:, :, ::stride, ::stride, :, :]
                dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # [F,C,KH,KW]
                _accum(w, dw)
            if x.requires_grad:
                dcols = np.tensordot(g, w.data, axes=([1], [0]))  # [N,OH,OW,C,KH,KW]
                dxp = np.zeros_like(xp)
                for ki in range(kh):
                    for kj in range(kw):
                        dxp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += (
                            dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                        )
                if padding:
                    dxp = dxp[:, :, padding:-padding, padding:-padding]
                _accum(x, dxp)
        out._backward = backward
    return out


def batch_norm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=1e-5):
    """Channel-wise normalization over all non-channel axes.

    x is [N,C] or [N,C,H,W] with the channel on axis 1; time-unrolled
    callers flatten [T,B,...] to an effective batch of T*B first, so the
    statistics pool over time and batch together. Running buffers are plain
    arrays mutated in place during training (biased variance throughout).
    """
    if x.data.ndim not in (2, 4):
        raise ShapeError(f"batch_norm: expected 2-D or 4-D input, got {x.data.shape}")
    axes = (0,) if x.data.ndim == 2 else (0, 2, 3)
    cshape = [1] * x.data.ndim
    cshape[1] = x.data.shape[1]
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(cshape)) * inv_std.reshape(cshape)
    val = gamma.data.reshape(cshape) * xhat + beta.data.reshape(cshape)
    out, rec = record_op(val, (x, gamma, beta), None)
    if rec:
        nr = x.data.size // x.data.shape[1]
        def backward():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                _accum(beta, g.sum(axis=axes))
            if x.requires_grad:
                scale = (gamma.data * inv_std).reshape(cshape)
                if training:
                    gm = g.mean(axis=axes).reshape(cshape)
                    gxm = (g * xhat).mean(axis=axes).reshape(cshape)
                    _accum(x, scale * (g - gm - xhat * gxm))
                else:
                    _accum(x, scale * g)
        out._backward = backward
    return out


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy; logits [N,C], integer labels [N]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: expected [N,C] logits, got {logits.data.shape}")
    labels = np.asarray(labels)
    n, c = logits.data.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: labels shape {labels.shape} does not match batch {n}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsumexp
    loss = -logp[np.arange(n), labels].mean()
    out, rec = record_op(np.asarray(loss, dtype=logits.data.dtype), (logits,), None)
    if rec:
        def backward():
            probs = np.exp(logp)
            probs[np.arange(n), labels] -= 1.0
            probs /= n
            _accum(logits, out.grad * probs)
        out._backward = backward
    return out


def softmax(logits_data):
    """Plain numpy softmax over the last axis (prediction-side, no grad)."""
    z = logits_data - logits_data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)
