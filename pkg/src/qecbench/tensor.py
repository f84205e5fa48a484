"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed inside a :class:`Tape` context are recorded in execution
order; :func:`backward` replays that record in reverse and accumulates
gradients into every leaf tensor created with ``requires_grad=True``.  Outside
a tape nothing is recorded, which is how inference runs.

Every primitive accepts optional leading batch axes (numpy broadcasting rules
apply), so a batch of graphs or images is one forward pass.
"""

import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import InvalidParameterError, NoTraceError, ShapeError

_state = threading.local()


def _active_tape():
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Differentiation record confined to the thread that opened it."""

    def __init__(self):
        self.ops = []
        self.consumed = False

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out, parents, vjp):
        out._tape = self
        out._index = len(self.ops)
        self.ops.append((out, parents, vjp))

    def backward(self, loss):
        if loss._tape is not self:
            raise NoTraceError("loss was not produced on this tape")
        if self.consumed:
            raise RuntimeError("backward() already ran on this tape; open a new Tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
        self.consumed = True
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, vjp in reversed(self.ops[: loss._index + 1]):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._tape is self:
                    key = id(parent)
                    grads[key] = grads[key] + pg if key in grads else pg
                else:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg


def backward(loss):
    """Populate ``.grad`` on every parameter reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise NoTraceError("tensor carries no differentiation trace")
    loss._tape.backward(loss)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_tape", "_index", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64, copy=True) if not (
            isinstance(data, np.ndarray) and data.dtype == np.float64
        ) else data
        self.grad = None
        self.requires_grad = requires_grad
        self._tape = None
        self._index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self):
        return mean(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data, parents, vjp):
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    return out


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}") from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"cannot subtract shapes {a.shape} and {b.shape}") from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}") from None
    return _make(
        data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b):
    """Matrix product with batch broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul batch mismatch: {a.shape} @ {b.shape}") from None

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _make(data, (a, b), vjp)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}") from None
    return _make(data, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swapaxes(x, a1, a2):
    axes = list(range(as_tensor(x).ndim))
    axes[a1], axes[a2] = axes[a2], axes[a1]
    return transpose(x, tuple(axes))


def sum_(x, axis=None):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    out_shape = np.sum(x.data, axis=axis).shape
    out = _make(data, (x,), vjp)
    return reshape(out, out_shape) if out.shape != out_shape else out


def mean(x):
    x = as_tensor(x)
    return mul(sum_(x), 1.0 / x.data.size)


def concat(tensors, axis=-1):
    """Concatenate along ``axis``; leading axes must agree."""
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"cannot concatenate shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(data, tuple(tensors), vjp)


def take_rows(x, index, axis=-2):
    """Select positions ``index`` along ``axis``."""
    x = as_tensor(x)
    index = np.asarray(index)
    axis = axis % x.ndim

    def vjp(g):
        full = np.zeros(x.shape)
        slicer = [slice(None)] * x.ndim
        slicer[axis] = index
        np.add.at(full, tuple(slicer), g)
        return (full,)

    return _make(np.take(x.data, index, axis=axis), (x,), vjp)


def relu(x):
    x = as_tensor(x)
    on = x.data > 0
    return _make(np.where(on, x.data, 0.0), (x,), lambda g: (g * on,))


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),))


def softmax_rows(x):
    """Softmax over the last axis (rows of a matrix, per batch element)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"softmax_rows needs rank >= 2 input, got shape {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), vjp)


def log_softmax_rows(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def vjp(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), vjp)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "softmax_rows": softmax_rows}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise InvalidParameterError(
            f"unknown activation {kind!r}; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(x)


def dropout(x, rate, rng):
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    x = as_tensor(x)
    if rng is None or rate == 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * keep, (x,), lambda g: (g * keep,))


def _as_batched_image(x, name):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{name} expects C x H x W or B x C x H x W input, got shape {x.shape}")


def _conv3x3(xd, kd):
    """Raw zero-padded 3x3 same convolution on (B, C, H, W) arrays."""
    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # B, C, H, W, 3, 3
    out = np.tensordot(win, kd, axes=([1, 4, 5], [1, 2, 3]))  # B, H, W, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2)), win


def conv2d_same(x, kernel, bias):
    """Zero-padded 3x3 convolution preserving spatial extents."""
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ShapeError(f"conv2d_same needs a C_out x C_in x 3 x 3 kernel, got {kernel.shape}")
    xb, squeeze = _as_batched_image(x, "conv2d_same")
    if xb.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {xb.shape[1]} channels, kernel expects {kernel.shape[1]}")
    if bias.shape != (kernel.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {kernel.shape[0]} output channels")
    out, win = _conv3x3(xb.data, kernel.data)
    out += bias.data[:, None, None]

    def vjp(g):
        gx = gk = gb = None
        if xb.requires_grad:
            flipped = np.ascontiguousarray(kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx, _ = _conv3x3(g, flipped)
        if kernel.requires_grad:
            gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    y = _make(out, (xb, kernel, bias), vjp)
    return reshape(y, y.shape[1:]) if squeeze else y


def conv1x1(x, weight, bias):
    """Per-pixel linear map over channels; ``weight`` is C_out x C_in."""
    x = as_tensor(x)
    xb, squeeze = _as_batched_image(x, "conv1x1")
    b, c, h, w = xb.shape
    flat = reshape(transpose(xb, (0, 2, 3, 1)), (b, h * w, c))
    y = add(matmul(flat, transpose(as_tensor(weight), (1, 0))), bias)
    y = transpose(reshape(y, (b, h, w, -1)), (0, 3, 1, 2))
    return reshape(y, y.shape[1:]) if squeeze else y


def pad_spatial(x, height, width):
    """Zero-pad the last two axes at the bottom/right up to ``height`` x ``width``."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if height < h or width < w:
        raise ShapeError(f"cannot pad {x.shape} down to {height} x {width}")
    pad = [(0, 0)] * (x.ndim - 2) + [(0, height - h), (0, width - w)]
    return _make(np.pad(x.data, pad), (x,), lambda g: (g[..., :h, :w],))


def crop_spatial(x, height, width):
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if height > h or width > w:
        raise ShapeError(f"cannot crop {x.shape} to {height} x {width}")

    def vjp(g):
        full = np.zeros(x.shape)
        full[..., :height, :width] = g
        return (full,)

    return _make(np.ascontiguousarray(x.data[..., :height, :width]), (x,), vjp)


def maxpool2(x):
    """2x2 max pooling, stride 2; odd extents are zero-padded first (ceil division)."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"maxpool2 needs spatial axes, got shape {x.shape}")
    h, w = x.shape[-2:]
    hp, wp = h + h % 2, w + w % 2
    if (hp, wp) != (h, w):
        x = pad_spatial(x, hp, wp)
    lead = x.shape[:-2]
    blocks = x.data.reshape(lead + (hp // 2, 2, wp // 2, 2))
    nd = len(lead)
    perm = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    windows = blocks.transpose(perm).reshape(lead + (hp // 2, wp // 2, 4))
    arg = windows.argmax(axis=-1)  # first maximum in row-major window order
    out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros(windows.shape)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(lead + (hp // 2, wp // 2, 2, 2))
        inv = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
        return (gw.transpose(inv).reshape(lead + (hp, wp)),)

    return _make(out, (x,), vjp)


def upsample2(x):
    """Nearest-neighbour upsampling doubling both spatial extents."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    out = np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1)

    def vjp(g):
        lead = g.shape[:-2]
        return (g.reshape(lead + (h, 2, w, 2)).sum(axis=(-3, -1)),)

    return _make(out, (x,), vjp)


def masked_cross_entropy(logits, labels, mask):
    """Mean cross-entropy over the rows selected by ``mask``.

    ``logits`` is ``(..., nodes, 4)``; ``labels`` holds one entry per selected
    row, either as class indices ``(..., n_selected)`` or one-hot rows
    ``(..., n_selected, 4)``.  Unselected rows never enter the computation.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 1 or logits.ndim < 2 or mask.shape[0] != logits.shape[-2]:
        raise ShapeError(f"mask of shape {mask.shape} does not match logits {logits.shape}")
    rows = np.flatnonzero(mask)
    if len(rows) == 0:
        raise InvalidParameterError("masked_cross_entropy needs at least one selected row")
    labels = np.asarray(labels)
    n_classes = logits.shape[-1]
    if labels.shape == logits.shape[:-2] + (len(rows), n_classes):
        onehot = labels.astype(np.float64)
    elif labels.shape == logits.shape[:-2] + (len(rows),):
        onehot = np.eye(n_classes)[labels.astype(np.int64)]
    else:
        raise ShapeError(
            f"labels of shape {labels.shape} do not match {len(rows)} selected rows of {logits.shape}"
        )
    logp = log_softmax_rows(take_rows(logits, rows, axis=-2))
    return mul(sum_(mul(logp, onehot)), -1.0 / (onehot.size // n_classes))


def gradcheck(fn, inputs, h=1e-6, max_coords=None, rng=None, floor=1e-3):
    """Largest relative error between analytic and central-difference gradients.

    ``fn`` maps the input tensors to a scalar tensor.  The error for one
    coordinate is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    round-off on near-zero gradients from dominating.  With ``max_coords`` only that
    many randomly chosen coordinates per input are perturbed.
    """
    inputs = [t if isinstance(t, Tensor) else parameter(t) for t in inputs]
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    with Tape():
        loss = fn(*inputs)
        backward(loss)
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in inputs:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, max_coords, replace=False)
        for i in coords:
            old = flat[i]
            flat[i] = old + h
            up = float(fn(*inputs).data)
            flat[i] = old - h
            down = float(fn(*inputs).data)
            flat[i] = old
            numeric = (up - down) / (2 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), floor))
    return worst
