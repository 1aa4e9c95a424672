"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records every primitive applied while it is active (per
thread); ``backward`` replays the records in reverse and accumulates
gradients per input tensor.  Everything is double precision and single
threaded per tape, with fixed reduction orders, so a forward/backward
pass is bit-reproducible.

The hot primitives (convolution, pooling) run through
``proxslim.kernels`` and therefore honor the backend selection; the
rest is plain vectorized numpy.
"""

import threading

import numpy as np

from . import kernels
from .errors import ContractError, NumericError, ShapeError

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """A shape plus a flat row-major float64 buffer.

    Constructing a Tensor from external data validates finiteness;
    primitive results are wrapped internally without re-validation
    except after operations that can overflow (exp, log, sqrt, div).
    """

    __slots__ = ("data",)

    def __init__(self, data):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NumericError("non-finite values in tensor input")
        self.data = arr

    @classmethod
    def _wrap(cls, arr):
        t = object.__new__(cls)
        t.data = arr
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar; scalars are allowed on either side
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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axes=None, keepdims=False):
        return tensor_sum(self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return tensor_mean(self, axes, keepdims)


class Tape:
    """Ordered record of primitives for one forward pass.

    Used as a context manager; at most one tape is active per thread.
    ``backward(tape, loss)`` walks the records once, in reverse order
    of execution (a reverse topological order by construction).
    """

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        if _active_tape() is not None:
            raise ContractError("a tape is already active in this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb):
        _LOCAL.tape = None
        return False

    def _record(self, out, inputs, backward):
        self._nodes.append((out, inputs, backward))

    def __len__(self):
        return len(self._nodes)


class Gradients:
    """Gradient lookup by tensor; tensors off every path to the loss
    report zeros."""

    def __init__(self, table):
        self._table = table

    def __getitem__(self, tensor):
        g = self._table.get(id(tensor))
        if g is None:
            return np.zeros_like(tensor.data)
        return g


def backward(tape, loss):
    """Accumulate d(loss)/d(input) for every tensor recorded on the tape.

    Parameters
    ----------
    tape : Tape
        The tape that was active while ``loss`` was computed.
    loss : Tensor
        A scalar output recorded on ``tape``.

    Returns
    -------
    Gradients
        Mapping from tensor to its gradient array.
    """
    if loss.data.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    table = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bwd in reversed(tape._nodes):
        gout = table.get(id(out))
        if gout is None:
            continue
        gins = bwd(gout)
        for t, g in zip(inputs, gins):
            if g is None:
                continue
            acc = table.get(id(t))
            table[id(t)] = g if acc is None else acc + g
    return Gradients(table)


def _coerce(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _record(out, inputs, bwd):
    tape = _active_tape()
    if tape is not None:
        tape._record(out, inputs, bwd)
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite result in {op}")
    return arr


# ---------------------------------------------------------------------------
# elementwise and broadcast primitives


def add(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor._wrap(a.data + b.data)
    ash, bsh = a.data.shape, b.data.shape
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh))
    )


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor._wrap(a.data - b.data)
    ash, bsh = a.data.shape, b.data.shape
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh))
    )


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    out = Tensor._wrap(a.data * b.data)
    ad, bd = a.data, b.data
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor._wrap(_check_finite(a.data / b.data, "div"))
    ad, bd = a.data, b.data
    return _record(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        ),
    )


def neg(a):
    a = _coerce(a)
    out = Tensor._wrap(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def sqrt(a):
    a = _coerce(a)
    with np.errstate(invalid="ignore"):
        out = Tensor._wrap(_check_finite(np.sqrt(a.data), "sqrt"))
    od = out.data
    return _record(out, (a,), lambda g: (g / (2.0 * od),))


def exp(a):
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out = Tensor._wrap(_check_finite(np.exp(a.data), "exp"))
    od = out.data
    return _record(out, (a,), lambda g: (g * od,))


def log(a):
    a = _coerce(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor._wrap(_check_finite(np.log(a.data), "log"))
    ad = a.data
    return _record(out, (a,), lambda g: (g / ad,))


def power(a, p):
    a = _coerce(a)
    out = Tensor._wrap(_check_finite(a.data**p, "power"))
    ad = a.data
    return _record(out, (a,), lambda g: (g * p * ad ** (p - 1),))


def relu(a):
    a = _coerce(a)
    out = Tensor._wrap(np.maximum(a.data, 0.0))
    mask = a.data > 0.0
    return _record(out, (a,), lambda g: (g * mask,))


def softplus(a, sharpness=1.0):
    """Smooth ReLU: (1/c) log(1 + exp(c x)), overflow safe."""
    if sharpness <= 0:
        raise ContractError("softplus sharpness must be positive")
    a = _coerce(a)
    z = sharpness * a.data
    out = Tensor._wrap((np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))) / sharpness)
    sig = _sigmoid(z)
    return _record(out, (a,), lambda g: (g * sig,))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# ---------------------------------------------------------------------------
# shape and reduction primitives


def reshape(a, shape):
    a = _coerce(a)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"cannot reshape {a.data.shape} to {tuple(shape)}")
    out = Tensor._wrap(a.data.reshape(shape))
    ash = a.data.shape
    return _record(out, (a,), lambda g: (g.reshape(ash),))


def tensor_sum(a, axes=None, keepdims=False):
    a = _coerce(a)
    out = Tensor._wrap(a.data.sum(axis=axes, keepdims=keepdims))
    ash = a.data.shape

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, ash).copy(),)

    return _record(out, (a,), bwd)


def tensor_mean(a, axes=None, keepdims=False):
    a = _coerce(a)
    out = Tensor._wrap(a.data.mean(axis=axes, keepdims=keepdims))
    ash = a.data.shape
    count = a.data.size // max(out.data.size, 1)

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, ash).copy(),)

    return _record(out, (a,), bwd)


# ---------------------------------------------------------------------------
# linear algebra and structured primitives


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul expects (m,k) @ (k,n), got {a.data.shape} @ {b.data.shape}"
        )
    out = Tensor._wrap(a.data @ b.data)
    ad, bd = a.data, b.data
    return _record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def conv2d(x, w, b=None, padding=0):
    """2-D cross-correlation with unit stride.

    Parameters
    ----------
    x : Tensor, shape (B, C_in, H, W)
    w : Tensor, shape (C_out, C_in, kh, kw)
    b : Tensor or None, shape (C_out,)
    padding : int
        Symmetric zero padding applied to both spatial dims.
    """
    x, w = _coerce(x), _coerce(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError("conv2d expects 4-d input and kernel")
    B, Ci, H, W = x.data.shape
    Co, Ciw, kh, kw = w.data.shape
    if Ci != Ciw:
        raise ShapeError(f"conv2d channel mismatch: input {Ci}, kernel {Ciw}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Hp, Wp = xp.shape[2], xp.shape[3]
    if Hp < kh or Wp < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {Hp}x{Wp}")
    bias = b if b is not None else Tensor._wrap(np.zeros(Co))
    if bias.data.shape != (Co,):
        raise ShapeError(f"conv2d bias shape {bias.data.shape} != ({Co},)")
    out = Tensor._wrap(kernels.conv2d_fwd(xp, w.data, bias.data))
    wd = w.data

    def bwd(g):
        g = np.ascontiguousarray(g)
        dxp = kernels.conv2d_bwd_input(g, wd, Hp, Wp)
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        dw, db = kernels.conv2d_bwd_weights(xp, g, kh, kw)
        return (np.ascontiguousarray(dxp), dw, db if b is not None else None)

    return _record(out, (x, w, bias), bwd)


def _pool_check(x, window):
    if x.data.ndim != 4:
        raise ShapeError("pooling expects a 4-d input")
    B, C, H, W = x.data.shape
    if H % window or W % window:
        raise ShapeError(f"pool window {window} does not divide input {H}x{W}")


def softmax_pool(x, window=2, sharpness=1.0):
    """Smooth max pooling: per window, sum_i x_i e^{c x_i} / sum_i e^{c x_i}."""
    if sharpness <= 0:
        raise ContractError("softmax_pool sharpness must be positive")
    x = _coerce(x)
    _pool_check(x, window)
    xd = x.data
    out = Tensor._wrap(kernels.softmax_pool_fwd(xd, window, float(sharpness)))
    od = out.data
    H, W = xd.shape[2], xd.shape[3]

    def bwd(g):
        g = np.ascontiguousarray(g)
        return (kernels.softmax_pool_bwd(xd, od, g, window, float(sharpness)),)

    return _record(out, (x,), bwd)


def max_pool(x, window=2):
    x = _coerce(x)
    _pool_check(x, window)
    xd = x.data
    y, idx = kernels.max_pool_fwd(xd, window)
    out = Tensor._wrap(y)
    H, W = xd.shape[2], xd.shape[3]

    def bwd(g):
        g = np.ascontiguousarray(g)
        return (kernels.max_pool_bwd(g, idx, window, H, W),)

    return _record(out, (x,), bwd)


def avg_pool(x, window=2):
    x = _coerce(x)
    _pool_check(x, window)
    B, C, H, W = x.data.shape
    Ho, Wo = H // window, W // window
    win = x.data.reshape(B, C, Ho, window, Wo, window)
    out = Tensor._wrap(win.mean(axis=(3, 5)))
    scale = 1.0 / (window * window)

    def bwd(g):
        gx = np.repeat(np.repeat(g, window, axis=2), window, axis=3)
        return (gx * scale,)

    return _record(out, (x,), bwd)


def cross_entropy_mean(logits, labels):
    """Mean cross-entropy of integer labels under softmax of ``logits``.

    Stable log-sum-exp forward; backward is (softmax - onehot) / batch.
    """
    logits = _coerce(logits)
    if logits.data.ndim != 2:
        raise ShapeError("cross_entropy_mean expects (batch, classes) logits")
    labels = np.asarray(labels)
    B, K = logits.data.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} != ({B},)")
    if labels.min() < 0 or labels.max() >= K:
        raise ContractError(f"label out of range for {K} classes")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    out = Tensor._wrap(np.asarray(np.mean(lse - z[np.arange(B), labels])))

    def bwd(g):
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(B), labels] -= 1.0
        return (g * p / B,)

    return _record(out, (logits,), bwd)


# Registry of taped primitives, keyed by descriptor name.  Mostly useful
# for generic smoke tests; library code calls the functions directly.
PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "sqrt": sqrt,
    "exp": exp,
    "log": log,
    "power": power,
    "relu": relu,
    "softplus": softplus,
    "reshape": reshape,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "matmul": matmul,
    "conv2d": conv2d,
    "softmax_pool": softmax_pool,
    "max_pool": max_pool,
    "avg_pool": avg_pool,
    "cross_entropy_mean": cross_entropy_mean,
}


def forward_primitive(op, *inputs, **params):
    """Apply a primitive by descriptor name (see ``PRIMITIVES``)."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ContractError(f"unknown primitive {op!r}") from None
    return fn(*inputs, **params)
