"""Rank-4 tensors with a small reverse-mode autodiff engine.

Every tensor is (batch, channels, height, width). Operations build a DAG of
Tensor nodes; `backward` walks it once in reverse topological order and
accumulates gradients into every leaf that requires them.
"""

import contextlib
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from daflow.errors import ContractError, NumericalError, ShapeError

DTYPES = {'f32': np.float32, 'f64': np.float64}
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

_state = {'dtype': np.float32, 'check_finite': True}


@contextlib.contextmanager
def precision(name: str):
    """Temporarily switch the default dtype ('f32' or 'f64')."""
    if name not in DTYPES:
        raise ValueError(f"Unknown precision '{name}', expected one of {sorted(DTYPES)}")
    previous = _state['dtype']
    _state['dtype'] = DTYPES[name]
    try:
        yield
    finally:
        _state['dtype'] = previous


def default_dtype():
    return _state['dtype']


class Tensor:
    """A dense (b, c, h, w) array that doubles as a graph node."""

    def __init__(self, data, requires_grad: bool = False, dtype=None,
                 _parents: Tuple['Tensor', ...] = (), op: str = 'leaf'):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in DTYPE_CODES:
            arr = arr.astype(_state['dtype'])
        if arr.ndim != 4:
            raise ShapeError(f"Tensor must be rank 4 (b, c, h, w), got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self._parents = _parents
        self._backward: Optional[Callable[[], None]] = None

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return tuple(self.data.shape)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> 'Tensor':
        return Tensor(self.data)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got {self.dims}")
        return float(self.data.reshape(-1)[0])

    @classmethod
    def zeros(cls, dims, dtype=None) -> 'Tensor':
        return cls(np.zeros(dims, dtype=dtype or _state['dtype']))

    def __repr__(self):
        return f"Tensor(dims={self.dims}, op={self.op}, requires_grad={self.requires_grad})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


class Parameter(Tensor):
    """A named, optionally trainable leaf tensor."""

    def __init__(self, name: str, data, trainable: bool = True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)
        self.name = name
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter(name={self.name}, dims={self.dims}, trainable={self.trainable})"


################################################
# graph plumbing
################################################

def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full((1, 1, 1, 1), x, dtype=like.dtype))


def _check_finite(arr: np.ndarray, op: str):
    if _state['check_finite'] and not np.isfinite(arr).all():
        raise NumericalError(f"{op} produced non-finite values")


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    _check_finite(data, op)
    requires_grad = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires_grad,
                  _parents=tuple(parents) if requires_grad else (), op=op)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def walk_graph(root: Tensor) -> List[Tensor]:
    """Return nodes reachable from `root` in topological order (parents first)."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def graph_nbytes(root: Tensor) -> int:
    """Bytes held by forward values across the graph; a peak-memory estimate."""
    return sum(node.data.nbytes for node in walk_graph(root))


def backward(loss: Tensor):
    """Populate `.grad` on every leaf reachable from a scalar loss."""
    if loss.dims != (1, 1, 1, 1):
        raise ContractError(f"backward needs a scalar (1, 1, 1, 1) loss, got {loss.dims}")
    if not loss.requires_grad:
        return
    order = walk_graph(loss)
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


def zero_grad(params: Iterable[Parameter]):
    for p in params:
        p.zero_grad()


################################################
# elementwise
################################################

def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = _make(a.data + b.data, (a, b), 'add')

    def _backward():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad, b.data.shape))
    out._backward = _backward
    return out


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = _make(a.data - b.data, (a, b), 'sub')

    def _backward():
        _accumulate(a, _unbroadcast(out.grad, a.data.shape))
        _accumulate(b, _unbroadcast(-out.grad, b.data.shape))
    out._backward = _backward
    return out


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    out = _make(a.data * b.data, (a, b), 'mul')

    def _backward():
        _accumulate(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(out.grad * a.data, b.data.shape))
    out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = _make(-a.data, (a,), 'neg')

    def _backward():
        _accumulate(a, -out.grad)
    out._backward = _backward
    return out


def abs_(a: Tensor) -> Tensor:
    out = _make(np.abs(a.data), (a,), 'abs')

    def _backward():
        _accumulate(a, out.grad * np.sign(a.data))
    out._backward = _backward
    return out


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    if not 0.0 <= slope < 1.0:
        raise ContractError(f"leaky_relu slope must be in [0, 1), got {slope}")
    positive = x.data >= 0
    out = _make(np.where(positive, x.data, x.data * x.dtype.type(slope)), (x,), 'leaky_relu')

    def _backward():
        _accumulate(x, out.grad * np.where(positive, 1.0, slope).astype(x.dtype))
    out._backward = _backward
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    out = _make(y.astype(x.dtype, copy=False), (x,), 'sigmoid')

    def _backward():
        _accumulate(x, out.grad * y * (1.0 - y))
    out._backward = _backward
    return out


################################################
# reductions
################################################

def sum_all(x: Tensor) -> Tensor:
    out = _make(np.sum(x.data, dtype=x.dtype).reshape(1, 1, 1, 1), (x,), 'sum')

    def _backward():
        _accumulate(x, np.broadcast_to(out.grad.reshape(()), x.data.shape))
    out._backward = _backward
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.data.size
    out = _make((np.sum(x.data, dtype=x.dtype) / n).reshape(1, 1, 1, 1), (x,), 'mean')

    def _backward():
        _accumulate(x, np.broadcast_to(out.grad.reshape(()) / n, x.data.shape))
    out._backward = _backward
    return out


################################################
# channel plumbing
################################################

def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise ContractError("concat_channels needs at least one tensor")
    if len(xs) == 1:
        return xs[0]
    b, _, h, w = xs[0].dims
    for x in xs[1:]:
        if (x.dims[0], x.dims[2], x.dims[3]) != (b, h, w):
            raise ShapeError(f"concat_channels mismatch: {xs[0].dims} vs {x.dims}")
    out = _make(np.concatenate([x.data for x in xs], axis=1), xs, 'concat')
    bounds = np.cumsum([0] + [x.dims[1] for x in xs])

    def _backward():
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            _accumulate(x, out.grad[:, lo:hi])
    out._backward = _backward
    return out


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    if not 0 <= start < stop <= x.dims[1]:
        raise ShapeError(f"slice_channels [{start}:{stop}] out of range for {x.dims}")
    out = _make(x.data[:, start:stop], (x,), 'slice')

    def _backward():
        g = np.zeros_like(x.data)
        g[:, start:stop] = out.grad
        _accumulate(x, g)
    out._backward = _backward
    return out


def softmax_groups(x: Tensor, group_size: int) -> Tensor:
    """Softmax over each contiguous block of `group_size` channels, per pixel."""
    b, c, h, w = x.dims
    if group_size < 1 or c % group_size:
        raise ShapeError(f"softmax_groups: {c} channels not divisible by group size {group_size}")
    z = x.data.reshape(b, c // group_size, group_size, h, w)
    e = np.exp(z - z.max(axis=2, keepdims=True))
    s = e / e.sum(axis=2, keepdims=True)
    out = _make(s.reshape(b, c, h, w), (x,), 'softmax')

    def _backward():
        g = out.grad.reshape(s.shape)
        dz = s * (g - (g * s).sum(axis=2, keepdims=True))
        _accumulate(x, dz.reshape(b, c, h, w))
    out._backward = _backward
    return out


def gram(x: Tensor) -> Tensor:
    """Per-sample Gram matrix F F^T / (C H W), returned as (b, 1, C, C)."""
    b, c, h, w = x.dims
    f = x.data.reshape(b, c, h * w)
    norm = float(c * h * w)
    out = _make((f @ f.transpose(0, 2, 1) / norm)[:, None], (x,), 'gram')

    def _backward():
        g = out.grad[:, 0]
        df = (g + g.transpose(0, 2, 1)) @ f / norm
        _accumulate(x, df.reshape(b, c, h, w))
    out._backward = _backward
    return out


################################################
# convolution
################################################

def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding; weight is (out, in, kh, kw)."""
    if stride < 1 or padding < 0:
        raise ContractError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    bs, c, h, wd = x.dims
    o, ci, kh, kw = w.dims
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {x.dims} vs weight {w.dims}")
    if b is not None and b.dims != (1, o, 1, 1):
        raise ShapeError(f"conv2d bias {b.dims} does not match weight {w.dims}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d kernel {w.dims} larger than padded input {x.dims}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(bs * oh * ow, c * kh * kw)
    wmat = w.data.reshape(o, c * kh * kw)
    y = (cols @ wmat.T).reshape(bs, oh, ow, o).transpose(0, 3, 1, 2)
    if b is not None:
        y = y + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _make(np.ascontiguousarray(y), parents, 'conv2d')

    def _backward():
        g2 = out.grad.transpose(0, 2, 3, 1).reshape(-1, o)
        if w.requires_grad:
            _accumulate(w, (g2.T @ cols).reshape(w.data.shape))
        if b is not None and b.requires_grad:
            _accumulate(b, out.grad.sum(axis=(0, 2, 3)).reshape(1, o, 1, 1))
        if x.requires_grad:
            gcols = (g2 @ wmat).reshape(bs, oh, ow, c, kh, kw)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            _accumulate(x, gxp[:, :, padding:padding + h, padding:padding + wd])
    out._backward = _backward
    return out


################################################
# resampling
################################################

def interp_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Corner-aligned linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    m[rows, lo] = 1.0 - frac
    m[rows, lo + 1] += frac
    return m


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable corner-aligned bilinear resize to (out_h, out_w)."""
    _, _, h, w = x.dims
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear target must be positive, got {(out_h, out_w)}")
    ah = interp_matrix(h, out_h, x.dtype)
    aw = interp_matrix(w, out_w, x.dtype)
    y = np.einsum('oh,bchw,pw->bcop', ah, x.data, aw, optimize=True)
    out = _make(y.astype(x.dtype, copy=False), (x,), 'resize')

    def _backward():
        _accumulate(x, np.einsum('oh,bcop,pw->bchw', ah, out.grad, aw, optimize=True))
    out._backward = _backward
    return out


def upsample_bilinear2x(x: Tensor) -> Tensor:
    _, _, h, w = x.dims
    return resize_bilinear(x, 2 * h, 2 * w)


def area_downsample(x: Tensor, factor: int) -> Tensor:
    """Average non-overlapping factor x factor blocks."""
    b, c, h, w = x.dims
    if factor < 1 or h % factor or w % factor:
        raise ShapeError(f"area_downsample factor {factor} does not divide {x.dims}")
    if factor == 1:
        return x
    y = x.data.reshape(b, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    out = _make(y.astype(x.dtype, copy=False), (x,), 'area_down')

    def _backward():
        g = np.repeat(np.repeat(out.grad, factor, axis=2), factor, axis=3) / (factor * factor)
        _accumulate(x, g)
    out._backward = _backward
    return out
