"""Minimal reverse-mode automatic differentiation over dense numpy arrays.

Values are computed eagerly as the expression graph is built (define-by-run);
``backward`` walks the recorded graph in reverse.  Training runs in float32;
gradient checking builds its graphs in float64, where central differences are
trustworthy.

Layout is row-major N x H x W x C throughout.  Convolution weights are stored
filter-height x filter-width x in-depth x out-depth to match the channel-last
activation layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op; message names the op."""


class GraphError(ValueError):
    """A graph-level contract was violated (e.g. non-scalar loss)."""


def _as_array(value, dtype):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    return arr


class Node:
    """One vertex of the expression graph.

    ``value`` is a numpy array, ``grad`` is filled by ``backward`` and has the
    same shape.  ``parents`` are the producing op's inputs; leaves have none.
    ``needs_grad`` is false for constants and anything computed only from
    constants, letting the backward pass skip whole subgraphs.
    """

    __slots__ = ("value", "grad", "op", "parents", "_backward_fn", "needs_grad")

    def __init__(self, value, parents=(), op="leaf", backward_fn=None):
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self._backward_fn = backward_fn
        if parents:
            self.needs_grad = any(p.needs_grad for p in parents)
        else:
            self.needs_grad = True

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"


def leaf(value, dtype=np.float32):
    """Create a leaf node (parameter or input) from array-like data."""
    return Node(_as_array(value, dtype))


def constant(value, dtype=np.float32):
    """Leaf that never receives a gradient (backward skips it)."""
    node = Node(_as_array(value, dtype))
    node.op = "const"
    node.needs_grad = False
    return node


def forward(root: Node) -> np.ndarray:
    """Value of the (eagerly evaluated) expression graph rooted at ``root``."""
    return root.value


def _require_same_dtype(name, *nodes):
    dt = nodes[0].value.dtype
    for n in nodes[1:]:
        if n.value.dtype != dt:
            raise ShapeError(f"{name}: mixed dtypes {dt} and {n.value.dtype}")
    return dt


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(name, a, b, fn, dfa, dfb):
    _require_same_dtype(name, a, b)
    try:
        value = fn(a.value, b.value)
    except ValueError as exc:
        raise ShapeError(f"{name}: {a.value.shape} vs {b.value.shape}") from exc

    def backward_fn(grad, out_value):
        return (
            _unbroadcast(dfa(grad, a.value, b.value, out_value), a.value.shape),
            _unbroadcast(dfb(grad, a.value, b.value, out_value), b.value.shape),
        )

    return Node(value, (a, b), name, backward_fn)


def add(a, b):
    return _binary("add", a, b, np.add,
                   lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary("sub", a, b, np.subtract,
                   lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary("div", a, b, np.divide,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def neg(a):
    return Node(-a.value, (a,), "neg", lambda g, o: (-g,))


def scale(a, k):
    """Multiply by a python scalar (no extra leaf in the graph)."""
    k = a.value.dtype.type(k)
    return Node(a.value * k, (a,), "scale", lambda g, o: (g * k,))


def shift(a, k):
    """Add a python scalar."""
    k = a.value.dtype.type(k)
    return Node(a.value + k, (a,), "shift", lambda g, o: (g,))


def matmul(a, b):
    _require_same_dtype("matmul", a, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul: expects 2-D operands, got {a.value.shape} and {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: inner dims {a.value.shape} @ {b.value.shape}")
    value = a.value @ b.value

    def backward_fn(grad, out_value):
        return grad @ b.value.T, a.value.T @ grad

    return Node(value, (a, b), "matmul", backward_fn)


def reshape(a, shape):
    value = a.value.reshape(shape)
    return Node(value, (a,), "reshape",
                lambda g, o: (g.reshape(a.value.shape),))


def transpose(a, axes):
    value = np.transpose(a.value, axes)
    inv = np.argsort(axes)
    return Node(value, (a,), "transpose",
                lambda g, o: (np.transpose(g, inv),))


def concat(nodes, axis):
    _require_same_dtype("concat", *nodes)
    try:
        value = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[n.value.shape for n in nodes]}") from exc
    sizes = [n.value.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(grad, out_value):
        return tuple(np.split(grad, splits, axis=axis))

    return Node(value, tuple(nodes), "concat", backward_fn)


def slice_axis(a, axis, start, stop):
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    value = a.value[index].copy()

    def backward_fn(grad, out_value):
        full = np.zeros_like(a.value)
        full[index] = grad
        return (full,)

    return Node(value, (a,), "slice", backward_fn)


def sum_(a, axis=None, keepdims=False):
    value = a.value.sum(axis=axis, keepdims=keepdims)
    if value.ndim == 0:
        value = value.reshape(1)

    def backward_fn(grad, out_value):
        g = grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return Node(value, (a,), "sum", backward_fn)


def mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else a.value.shape[axis]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def relu(a):
    value = np.maximum(a.value, 0)
    return Node(value, (a,), "relu",
                lambda g, o: (g * (a.value > 0),))


def sigmoid(a):
    value = 1.0 / (1.0 + np.exp(-a.value))
    return Node(value, (a,), "sigmoid",
                lambda g, o: (g * o * (1.0 - o),))


def tanh(a):
    value = np.tanh(a.value)
    return Node(value, (a,), "tanh",
                lambda g, o: (g * (1.0 - o * o),))


def log(a):
    value = np.log(a.value)
    return Node(value, (a,), "log", lambda g, o: (g / a.value,))


def exp(a):
    value = np.exp(a.value)
    return Node(value, (a,), "exp", lambda g, o: (g * o,))


def softmax(a, axis=-1):
    """Softmax with max-subtraction; stable for scores up to ~1e4."""
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward_fn(grad, out_value):
        dot = (grad * out_value).sum(axis=axis, keepdims=True)
        return (out_value * (grad - dot),)

    return Node(value, (a,), "softmax", backward_fn)


def dense(x, weights, bias):
    """Fully connected layer: y_j = sum_i w_ji x_i + b_j.

    ``x`` is N x n, ``weights`` m x n, ``bias`` length m; returns N x m.
    """
    if x.value.ndim != 2 or weights.value.ndim != 2:
        raise ShapeError(f"dense: x {x.value.shape}, weights {weights.value.shape}")
    if x.value.shape[1] != weights.value.shape[1]:
        raise ShapeError(f"dense: inner dim {x.value.shape} vs weights {weights.value.shape}")
    if bias.value.shape != (weights.value.shape[0],):
        raise ShapeError(f"dense: bias {bias.value.shape} vs weights {weights.value.shape}")
    _require_same_dtype("dense", x, weights, bias)
    value = x.value @ weights.value.T + bias.value

    def backward_fn(grad, out_value):
        return grad @ weights.value, grad.T @ x.value, grad.sum(axis=0)

    return Node(value, (x, weights, bias), "dense", backward_fn)


# ---------------------------------------------------------------------------
# Convolution / pooling


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution: filter F, stride S, pads P1 (width) / P2
    (height), input depth D1, output depth D2.  Output extents must come out
    as positive integers: W2 = (W1 - F + 2*P1)/S + 1 and likewise for H2."""

    filter_size: int
    stride: int = 1
    pad_w: int = 0
    pad_h: int = 0
    in_depth: int = 1
    out_depth: int = 1

    def out_extent(self, extent, pad):
        num = extent - self.filter_size + 2 * pad
        if num < 0 or num % self.stride != 0:
            raise ShapeError(
                f"conv2d: extent {extent} with F={self.filter_size} S={self.stride} "
                f"P={pad} gives non-integer output")
        out = num // self.stride + 1
        if out < 1:
            raise ShapeError(f"conv2d: output extent {out} < 1")
        return out


def _pool_out(extent, size, stride, op):
    num = extent - size
    if num < 0 or num % stride != 0:
        raise ShapeError(f"{op}: extent {extent} with F={size} S={stride} gives non-integer output")
    return num // stride + 1


_patch_index_cache = {}


def _patch_indices(h, w, f, stride, h2, w2):
    """Flat spatial indices (h2*w2, f*f) of each window, row-major per window."""
    key = (h, w, f, stride, h2, w2)
    cached = _patch_index_cache.get(key)
    if cached is not None:
        return cached
    ys = (np.arange(h2) * stride)[:, None, None, None]
    xs = (np.arange(w2) * stride)[None, :, None, None]
    dy = np.arange(f)[None, None, :, None]
    dx = np.arange(f)[None, None, None, :]
    idx = ((ys + dy) * w + (xs + dx)).reshape(h2 * w2, f * f)
    _patch_index_cache[key] = idx
    return idx


def conv2d(x, spec: ConvSpec, weights, bias):
    """2-D convolution over N x H x W x D1 input.

    ``weights`` is F x F x D1 x D2, ``bias`` length D2.  Every output neuron
    is the dot product of the filter with its local input region plus bias;
    weights are shared across each depth slice.
    """
    if x.value.ndim != 4:
        raise ShapeError(f"conv2d: input must be N,H,W,D got {x.value.shape}")
    n, h, w, d1 = x.value.shape
    f = spec.filter_size
    if d1 != spec.in_depth:
        raise ShapeError(f"conv2d: input depth {d1} != spec depth {spec.in_depth}")
    if weights.value.shape != (f, f, spec.in_depth, spec.out_depth):
        raise ShapeError(f"conv2d: weights {weights.value.shape} != "
                         f"{(f, f, spec.in_depth, spec.out_depth)}")
    if bias.value.shape != (spec.out_depth,):
        raise ShapeError(f"conv2d: bias {bias.value.shape}")
    _require_same_dtype("conv2d", x, weights, bias)
    h2 = spec.out_extent(h, spec.pad_h)
    w2 = spec.out_extent(w, spec.pad_w)

    if spec.pad_h or spec.pad_w:
        xp = np.pad(x.value, ((0, 0), (spec.pad_h, spec.pad_h),
                              (spec.pad_w, spec.pad_w), (0, 0)))
    else:
        xp = x.value
    hp, wp = xp.shape[1], xp.shape[2]

    # im2col through a sliding-window view; (dy, dx, channel) ordering matches
    # the (f, f, d1, d2) weight layout
    windows = np.lib.stride_tricks.sliding_window_view(xp, (f, f), axis=(1, 2))
    if spec.stride > 1:
        windows = windows[:, ::spec.stride, ::spec.stride]
    cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3))
    cols = cols.reshape(n * h2 * w2, f * f * d1)
    wmat = weights.value.reshape(f * f * d1, spec.out_depth)
    value = (cols @ wmat + bias.value).reshape(n, h2, w2, spec.out_depth)
    stride = spec.stride

    def backward_fn(grad, out_value):
        gflat = grad.reshape(n * h2 * w2, spec.out_depth)
        gw = (cols.T @ gflat).reshape(f, f, d1, spec.out_depth)
        gb = gflat.sum(axis=0)
        if not x.needs_grad:
            return None, gw, gb
        # col2im as f*f strided slice-adds (each offset hits a regular grid)
        gcols = (gflat @ wmat.T).reshape(n, h2, w2, f, f, d1)
        gxp = np.zeros((n, hp, wp, d1), dtype=grad.dtype)
        for dy in range(f):
            for dx in range(f):
                gxp[:, dy:dy + stride * h2:stride,
                    dx:dx + stride * w2:stride, :] += gcols[:, :, :, dy, dx, :]
        if spec.pad_h or spec.pad_w:
            gxp = gxp[:, spec.pad_h:hp - spec.pad_h or None,
                      spec.pad_w:wp - spec.pad_w or None, :]
        return gxp, gw, gb

    return Node(value, (x, weights, bias), "conv2d", backward_fn)


def maxpool2d(x, size, stride):
    """Max pooling per depth slice; gradient routes to the window argmax,
    first (lowest flat index) element on ties."""
    if x.value.ndim != 4:
        raise ShapeError(f"maxpool2d: input must be N,H,W,D got {x.value.shape}")
    n, h, w, d = x.value.shape
    h2 = _pool_out(h, size, stride, "maxpool2d")
    w2 = _pool_out(w, size, stride, "maxpool2d")
    idx = _patch_indices(h, w, size, stride, h2, w2)
    flat = x.value.reshape(n, h * w, d)
    patches = flat[:, idx, :]                      # (n, h2*w2, size*size, d)
    arg = patches.argmax(axis=2)                   # first max on ties
    value = np.take_along_axis(patches, arg[:, :, None, :], axis=2)
    value = value[:, :, 0, :].reshape(n, h2, w2, d)

    disjoint = (stride == size and h2 * stride == h and w2 * stride == w)

    def backward_fn(grad, out_value):
        gflat = grad.reshape(n, h2 * w2, d)
        if disjoint:
            # each input cell belongs to exactly one window: single write
            out = np.zeros((n, h2, size, w2, size, d), dtype=grad.dtype)
            ni = np.arange(n)[:, None, None]
            wi = np.arange(h2 * w2)[None, :, None]
            di = np.arange(d)[None, None, :]
            out[ni, wi // w2, arg // size, wi % w2, arg % size, di] = gflat
            return (out.reshape(n, h, w, d),)
        gx = np.zeros((n, h * w, d), dtype=grad.dtype)
        win = np.take_along_axis(idx[None, :, :, None],
                                 arg[:, :, None, :], axis=2)[:, :, 0, :]
        ni = np.arange(n)[:, None, None]
        di = np.arange(d)[None, None, :]
        np.add.at(gx, (ni, win, di), gflat)
        return (gx.reshape(n, h, w, d),)

    return Node(value, (x,), "maxpool2d", backward_fn)


def avgpool2d(x, size, stride):
    """Average pooling per depth slice (used by transition/output stages)."""
    if x.value.ndim != 4:
        raise ShapeError(f"avgpool2d: input must be N,H,W,D got {x.value.shape}")
    n, h, w, d = x.value.shape
    h2 = _pool_out(h, size, stride, "avgpool2d")
    w2 = _pool_out(w, size, stride, "avgpool2d")
    idx = _patch_indices(h, w, size, stride, h2, w2)
    flat = x.value.reshape(n, h * w, d)
    value = flat[:, idx, :].mean(axis=2).reshape(n, h2, w2, d)
    inv = 1.0 / (size * size)

    def backward_fn(grad, out_value):
        gwin = grad * inv
        gx = np.zeros((n, h, w, d), dtype=grad.dtype)
        for dy in range(size):
            for dx in range(size):
                gx[:, dy:dy + stride * h2:stride,
                   dx:dx + stride * w2:stride, :] += gwin
        return (gx,)

    return Node(value, (x,), "avgpool2d", backward_fn)


def global_avgpool(x):
    """Mean over the spatial axes of N x H x W x D, returning N x D."""
    if x.value.ndim != 4:
        raise ShapeError(f"global_avgpool: input must be N,H,W,D got {x.value.shape}")
    n, h, w, d = x.value.shape
    value = x.value.mean(axis=(1, 2))
    inv = 1.0 / (h * w)

    def backward_fn(grad, out_value):
        return (np.broadcast_to(grad[:, None, None, :] * inv, x.value.shape).copy(),)

    return Node(value, (x,), "global_avgpool", backward_fn)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.9, eps=1e-5):
    """Per-channel batch normalization over the last axis.

    Training mode normalizes with batch statistics and folds them into the
    running averages in place (``running = momentum*running + (1-m)*batch``);
    inference mode uses the running averages.  ``eps`` guards degenerate
    (including single-sample) batches.
    """
    _require_same_dtype("batchnorm", x, gamma, beta)
    c = x.value.shape[-1]
    if gamma.value.shape != (c,) or beta.value.shape != (c,):
        raise ShapeError(f"batchnorm: gamma/beta must have shape ({c},)")
    axes = tuple(range(x.value.ndim - 1))
    if training:
        m = x.value.mean(axis=axes)
        v = x.value.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * m
        running_var *= momentum
        running_var += (1.0 - momentum) * v
    else:
        m = running_mean.astype(x.value.dtype)
        v = running_var.astype(x.value.dtype)
    inv_std = 1.0 / np.sqrt(v + eps)
    xhat = (x.value - m) * inv_std
    value = xhat * gamma.value + beta.value
    count = x.value.size // c

    def backward_fn(grad, out_value):
        ggamma = (grad * xhat).sum(axis=axes)
        gbeta = grad.sum(axis=axes)
        if training:
            gx = (gamma.value * inv_std / count) * (
                count * grad - gbeta - xhat * ggamma)
        else:
            gx = grad * gamma.value * inv_std
        return gx, ggamma, gbeta

    return Node(value, (x, gamma, beta), "batchnorm", backward_fn)


# ---------------------------------------------------------------------------
# Backward pass and gradient checking


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node):
    """Populate ``grad`` on every node reachable from ``loss``.

    ``loss`` must be scalar (one element).  Gradients from a previous call are
    overwritten, never accumulated across calls.
    """
    if loss.value.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None or node._backward_fn is None or not node.needs_grad:
            continue
        parent_grads = node._backward_fn(node.grad, node.value)
        for parent, g in zip(node.parents, parent_grads):
            if g is None or not parent.needs_grad:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += g


def gradient_check(build_fn, inputs, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``build_fn(*inputs)`` returns a Node; non-scalar outputs are summed into
    the checked loss.  ``inputs`` are float64 leaves.  Central differences
    perturb every element of every input by +/- eps.  The error is
    |analytic - numeric| / max(1, |analytic|, |numeric|) so near-zero
    gradients are compared absolutely.
    """
    for node in inputs:
        if node.value.dtype != np.float64:
            raise GraphError("gradient_check: run in 64-bit mode")
    loss = build_fn(*inputs)
    if loss.value.size != 1:
        loss = sum_(loss)
    backward(loss)
    analytic = [np.zeros_like(n.value) if n.grad is None else n.grad.copy()
                for n in inputs]
    worst = 0.0
    for node, ana in zip(inputs, analytic):
        flat = node.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(build_fn(*inputs).value.sum())
            flat[i] = orig - eps
            down = float(build_fn(*inputs).value.sum())
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = float(ana.reshape(-1)[i])
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
