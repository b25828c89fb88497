"""Reverse-mode differentiable numeric core backed by numpy arrays.

Every operation that participates in training records a backward closure on
the implicit tape (the parent links between tensors). Calling
``Tensor.backward()`` on a scalar walks the recorded graph once in reverse
topological order and accumulates gradients into every tensor with
``requires_grad``. ``finite_diff_check`` verifies any scalar-valued graph
against central differences.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class IndexOutOfRange(IndexError):
    pass


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / finite differences)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Dense real array plus an optional gradient slot and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.asarray(seed, dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return mul(self, power(other, -1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Trainable tensor with a stable name path used by optimizers and checkpoints."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _track(out: Tensor, parents: Sequence[Tensor], backward: Callable[[np.ndarray], None]) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting expanded."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _track(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _track(out, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data * s)

    def backward(g):
        _accumulate(a, g * s)

    return _track(out, (a,), backward)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data ** p)

    def backward(g):
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _track(out, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))

    def backward(g):
        _accumulate(a, g / a.data)

    return _track(out, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.exp(a.data))

    def backward(g):
        _accumulate(a, g * out.data)

    return _track(out, (a,), backward)


def gelu(a) -> Tensor:
    """Exact Gaussian-error linear unit, smooth everywhere."""
    a = _as_tensor(a)
    cdf = 0.5 * (1.0 + erf(a.data / np.sqrt(2.0)))
    out = Tensor(a.data * cdf)

    def backward(g):
        pdf = np.exp(-0.5 * a.data ** 2) / np.sqrt(2.0 * np.pi)
        _accumulate(a, g * (cdf + a.data * pdf))

    return _track(out, (a,), backward)


# -- shape plumbing -------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _track(out, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inv))

    return _track(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _track(out, tuple(tensors), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis``; the adjoint scatter-adds into the source positions.

    ``indices`` may be multi-dimensional, in which case its axes replace
    ``axis`` in the output. Doubles as embedding lookup when ``a`` is a
    parameter table.
    """
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    try:
        out = Tensor(np.take(a.data, idx, axis=axis))
    except IndexError as exc:
        raise IndexOutOfRange(
            f"index out of range for axis {axis} of size {a.shape[axis]}"
        ) from exc

    def backward(g):
        acc = np.zeros_like(a.data)
        moved = np.moveaxis(acc, axis, 0)
        g_moved = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(moved, idx, g_moved)
        _accumulate(a, acc)

    return _track(out, (a,), backward)


def expand_rows(values, indices, size: int) -> Tensor:
    """Place ``values`` rows at ``indices`` along axis 0 of a zero tensor of ``size`` rows."""
    values = _as_tensor(values)
    idx = np.asarray(indices, dtype=np.intp)
    data = np.zeros((size,) + values.shape[1:], dtype=np.float64)
    np.add.at(data, idx, values.data)
    out = Tensor(data)

    def backward(g):
        _accumulate(values, g[idx])

    return _track(out, (values,), backward)


# -- reductions -----------------------------------------------------------

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _track(out, (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / count, a.shape).copy())

    return _track(out, (a,), backward)


def variance(a, axis=None, keepdims: bool = False) -> Tensor:
    """Population variance, composed from mean/mul so the adjoint comes free."""
    a = _as_tensor(a)
    mu = mean(a, axis=axis, keepdims=True)
    centered = a - mu
    v = mean(mul(centered, centered), axis=axis, keepdims=keepdims)
    return v


# -- linear algebra -------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul inner dims {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data))

    def backward(g):
        if b.ndim == 1:
            _accumulate(a, _unbroadcast(np.multiply.outer(g, b.data), a.shape))
            _accumulate(b, _unbroadcast((a.data * np.expand_dims(g, -1)).reshape(-1, b.shape[0]).sum(0), b.shape))
            return
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _track(out, (a, b), backward)


def affine(x, w, b) -> Tensor:
    """Fused x @ w + b with a (m,) bias broadcast over the leading axes."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"affine shapes {x.shape} @ {w.shape} + {b.shape}")
    out = Tensor(np.matmul(x.data, w.data) + b.data)

    def backward(g):
        if x.requires_grad:
            _accumulate(x, np.matmul(g, w.data.T))
        if w.requires_grad:
            _accumulate(w, np.matmul(x.data.reshape(-1, w.shape[0]).T,
                                     g.reshape(-1, w.shape[1])))
        if b.requires_grad:
            _accumulate(b, g.reshape(-1, w.shape[1]).sum(axis=0))

    return _track(out, (x, w, b), backward)


def conv1d_grouped(x, weights, bias=None, padding: str = "same") -> Tensor:
    """Slide the same (Cout, Cin, k) kernel over every group sequence.

    ``x`` has shape (G, L, Cin); output is (G, L, Cout) with zero-padded
    borders so the window stays centered at each position. The kernel
    length must be odd for the centering to be exact. ``bias`` is an
    optional (Cout,) vector folded into the same op.
    """
    x, weights = _as_tensor(x), _as_tensor(weights)
    bias = _as_tensor(bias) if bias is not None else None
    if padding != "same":
        raise ValueError("only same-padding is supported")
    if x.ndim != 3 or weights.ndim != 3:
        raise ShapeMismatch("conv1d_grouped expects x (G,L,Cin) and weights (Cout,Cin,k)")
    cout, cin, k = weights.shape
    if k % 2 == 0:
        raise ShapeMismatch("kernel size must be odd for centered same-padding")
    if x.shape[-1] != cin:
        raise ShapeMismatch(f"input features {x.shape[-1]} != kernel Cin {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatch("bias must be (Cout,)")
    parents = (x, weights) if bias is None else (x, weights, bias)

    def bias_backward(g):
        if bias is not None and bias.requires_grad:
            _accumulate(bias, g.reshape(-1, cout).sum(axis=0))

    if k == 1:
        # Pointwise case: a per-position linear map.
        w2d = weights.data[:, :, 0]
        data = x.data @ w2d.T
        out = Tensor(data if bias is None else data + bias.data)

        def backward_pointwise(g):
            if weights.requires_grad:
                gw = np.einsum("glc,glo->oc", x.data, g)
                _accumulate(weights, gw[:, :, None])
            if x.requires_grad:
                _accumulate(x, g @ w2d)
            bias_backward(g)

        return _track(out, parents, backward_pointwise)

    pad = (k - 1) // 2
    G, L, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (0, 0)))
    win = sliding_window_view(xp, k, axis=1)  # (G, L, Cin, k)
    # One BLAS call over the flattened (Cin, k) window content.
    win_flat = win.reshape(G * L, cin * k)
    data = (win_flat @ weights.data.reshape(cout, cin * k).T).reshape(G, L, cout)
    out = Tensor(data if bias is None else data + bias.data)

    def backward(g):
        g_flat = g.reshape(G * L, cout)
        if weights.requires_grad:
            _accumulate(weights, (g_flat.T @ win_flat).reshape(cout, cin, k))
        if x.requires_grad:
            gq = np.pad(g, ((0, 0), (k - 1, k - 1), (0, 0)))
            gwin = sliding_window_view(gq, k, axis=1)  # (G, L+k-1, Cout, k)
            M = gwin.shape[1]
            wflip = weights.data[:, :, ::-1].transpose(0, 2, 1).reshape(cout * k, cin)
            dxp = (gwin.reshape(G * M, cout * k) @ wflip).reshape(G, M, cin)
            _accumulate(x, dxp[:, pad:pad + L, :])
        bias_backward(g)

    return _track(out, parents, backward)


# -- normalization and attention ------------------------------------------

def softmax(a) -> Tensor:
    """Softmax over the last axis with max-shift stabilization."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def backward(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(a, y * (g - inner))

    return _track(out, (a,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis vector to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            _accumulate(bias, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            s1 = gx.sum(axis=-1, keepdims=True)
            s2 = (gx * xhat).sum(axis=-1, keepdims=True)
            _accumulate(x, inv / d * (d * gx - s1 - xhat * s2))

    return _track(out, (x, gain, bias), backward)


def group_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Single-group normalization: each leading-axis slab of a (G, L, C) array
    is normalized over its full (L, C) extent, with per-channel affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.ndim != 3 or gain.shape != (x.shape[2],) or bias.shape != (x.shape[2],):
        raise ShapeMismatch("group_norm expects x (G, L, C) with (C,) gain and bias")
    N = x.shape[1] * x.shape[2]
    mu = x.data.mean(axis=(1, 2), keepdims=True)
    xc = x.data - mu
    var = (xc ** 2).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def backward(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).sum(axis=(0, 1)))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=(0, 1)))
        if x.requires_grad:
            gx = g * gain.data
            s1 = gx.mean(axis=(1, 2), keepdims=True)
            s2 = (gx * xhat).mean(axis=(1, 2), keepdims=True)
            _accumulate(x, inv * (gx - s1 - xhat * s2))

    return _track(out, (x, gain, bias), backward)


def softmax_attention(q, k, v) -> Tensor:
    """Scaled dot-product attention over the second-to-last axis.

    Accepts (..., m, dh) stacks; scores are scaled by 1/sqrt(dh), softmaxed
    per query row, and applied to the value rows.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise ShapeMismatch(f"attention shapes {q.shape}, {k.shape}, {v.shape}")
    dh = q.shape[-1]
    scores = scale(matmul(q, swap_last(k)), 1.0 / np.sqrt(dh))
    return matmul(softmax(scores), v)


def swap_last(a) -> Tensor:
    """Transpose the trailing two axes."""
    a = _as_tensor(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def dropout(a, rate: float, rng: np.random.Generator, train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/(1-rate) at train time."""
    a = _as_tensor(a)
    if not train or rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    out = Tensor(a.data * keep)

    def backward(g):
        _accumulate(a, g * keep)

    return _track(out, (a,), backward)


def rfft_magnitude(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Magnitude spectrum of a real signal; a fixed, non-differentiated transform."""
    return np.abs(np.fft.rfft(np.asarray(x, dtype=np.float64), axis=axis))


# -- verification ----------------------------------------------------------

def finite_diff_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    grad_floor: float = 1e-6,
) -> float:
    """Compare reverse-mode gradients of ``f()`` against central differences.

    ``f`` must rebuild its graph from the live ``params`` tensors on every
    call. Returns the worst relative error over all parameter elements,
    where the denominator is floored at ``grad_floor`` so that elements
    with vanishing gradients are judged on absolute error.
    """
    params = list(params)
    out = f()
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteValue("objective returned a non-finite value")
    for p in params:
        p.zero_grad()
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, an in zip(params, analytic):
            flat = p.data.reshape(-1)
            an_flat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = float(f().data)
                flat[i] = orig - eps
                lo = float(f().data)
                flat[i] = orig
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise NonFiniteValue("objective returned a non-finite value during probing")
                fd = (hi - lo) / (2.0 * eps)
                denom = max(abs(fd), abs(an_flat[i]), grad_floor)
                worst = max(worst, abs(fd - an_flat[i]) / denom)
    return worst


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad ** 2).sum())
    return float(np.sqrt(total))
