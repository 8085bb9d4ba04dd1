"""Small reverse-mode autodiff engine on top of numpy.

Graphs are built by running the forward computation (define-by-run); every
op records its parents and a closure that pushes the output gradient back to
them.  Everything is float64.

    >>> w = Tensor(np.ones(3), requires_grad=True)
    >>> loss = (w * w).sum()
    >>> grads = backward(loss, {"w": w})
    >>> grads["w"]
    array([2., 2., 2.])
"""
from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import sparse

LAYER_NORM_EPS = 1e-5

_ids = itertools.count()
_grad_enabled = True


class GraphError(ValueError):
    """Raised for malformed graphs: shape mismatch, non-scalar root, ..."""

    def __init__(self, msg: str, node_id: int | None = None):
        super().__init__(msg if node_id is None else f"node {node_id}: {msg}")
        self.node_id = node_id


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, node_id: int):
        super().__init__(f"node {node_id} ({op}) produced a non-finite value")
        self.op = op
        self.node_id = node_id


@contextmanager
def no_grad():
    """Evaluate without recording a graph (inference, frozen sub-networks)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "id", "_parents", "_backward")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = name or "leaf"
        self.id = next(_ids)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, id={self.id})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(out: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    node_id = next(_ids)
    # one reduction catches any nan/inf; only a finite overflow needs the full scan
    if not np.isfinite(out.sum()) and not np.all(np.isfinite(out)):
        raise NonFiniteError(op, node_id)
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.op = op
    t.id = node_id
    track = _grad_enabled and any(p.requires_grad for p in parents)
    t.requires_grad = track
    t._parents = tuple(parents) if track else ()
    t._backward = backward_fn if track else None
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum `g` back down to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op: str, *shapes) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise GraphError(f"{op}: incompatible shapes {shapes}", next(_ids)) from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, "add", (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, "relu", (a,), lambda g: (g * (out > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    return _make(s, "sigmoid", (a,), lambda g: (g * s * (1.0 - s),))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log", next(_ids))
    return _make(np.log(x), "log", (a,), lambda g: (g / x,))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) evaluated stably for large |x|."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(-x)
    return _make(out, "log_sigmoid", (a,), lambda g: (g * s,))


# ------------------------------------------------------------------ linalg

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise GraphError(f"matmul: incompatible shapes {a.shape} @ {b.shape}", next(_ids))
    _broadcast_shape("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # activations times a weight matrix: one flat GEMM each way
        k = ad.shape[-1]

        def bw_flat(g):
            g2 = g.reshape(-1, g.shape[-1])
            return g @ bd.T, ad.reshape(-1, k).T @ g2

        out = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (bd.shape[1],))
        return _make(out, "matmul", (a, b), bw_flat)

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, "matmul", (a, b), bw)


def linear(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b for a 2-D weight and 1-D bias, as a single node."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise GraphError(f"linear: incompatible shapes {x.shape}, {W.shape}, {b.shape}",
                         next(_ids))
    xd, Wd = x.data, W.data
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ Wd
    out += b.data

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ Wd.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    return _make(out.reshape(xd.shape[:-1] + (Wd.shape[1],)), "linear", (x, W, b), bw)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    s = a.data - a.data.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)

    def bw(g):
        gs = g * s
        gs -= s * gs.sum(axis=-1, keepdims=True)
        return (gs,)

    return _make(s, "softmax", (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then scale by gamma and shift by beta."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    with np.errstate(over="ignore"):
        var = (xc * xc).mean(axis=-1, keepdims=True)
    if not np.all(np.isfinite(var)):
        # an overflowing variance would otherwise normalize to silent zeros
        raise NonFiniteError("layer_norm", next(_ids))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    n = x.shape[-1]

    def bw(g):
        gx = g * gd
        dx = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        dgamma = (g * xhat).reshape(-1, n).sum(axis=0)
        dbeta = g.reshape(-1, n).sum(axis=0)
        return dx, dgamma, dbeta

    if gamma.shape != (n,) or beta.shape != (n,):
        raise GraphError(f"layer_norm: affine shape must be ({n},)", next(_ids))
    return _make(xhat * gd + beta.data, "layer_norm", (a, gamma, beta), bw)


# ---------------------------------------------------------------- structure

def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise GraphError(f"concat: incompatible shapes {[p.shape for p in parts]}",
                         next(_ids)) from None
    ax = axis % out.ndim
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, "concat", parts, bw)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), "sum", (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod(
        [a.shape[i] for i in np.atleast_1d(axis)])
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


def reshape(a: Tensor, shape) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise GraphError(f"reshape: cannot view {src} as {shape}", next(_ids)) from None
    return _make(out, "reshape", (a,), lambda g: (g.reshape(src),))


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    """Basic or integer-array indexing; the gradient scatters back with add.at
    (plain assignment when the index is made of slices and integers)."""
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) for i in parts)

    def bw(g):
        out = np.zeros(shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(np.array(a.data[index]), "slice", (a,), bw)


_SCATTER_CACHE: dict = {}


def _scatter_matrix(idx: np.ndarray, num: int):
    key = (idx.tobytes(), num)
    S = _SCATTER_CACHE.get(key)
    if S is None:
        if len(_SCATTER_CACHE) > 64:
            _SCATTER_CACHE.clear()
        S = sparse.csr_matrix((np.ones(idx.size), (idx, np.arange(idx.size))),
                              shape=(num, idx.size))
        _SCATTER_CACHE[key] = S
    return S


def _scatter_add(x: np.ndarray, idx: np.ndarray, num: int, axis: int) -> np.ndarray:
    """out[..., idx[j], ...] += x[..., j, ...] along `axis`, via a sparse matmul."""
    S = _scatter_matrix(idx, num)
    xm = np.moveaxis(x, axis, 0)
    out = S @ xm.reshape(idx.size, -1)
    return np.moveaxis(out.reshape((num,) + xm.shape[1:]), 0, axis)


def take(a: Tensor, idx: np.ndarray, axis: int = 0) -> Tensor:
    """Gather rows `idx` along `axis` (repeats allowed)."""
    idx = np.asarray(idx, dtype=np.intp)
    ax = axis % a.ndim
    n = a.shape[ax]
    return _make(np.take(a.data, idx, axis=ax), "take", (a,),
                 lambda g: (_scatter_add(g, idx, n, ax),))


def segment_sum(a: Tensor, segments: np.ndarray, num_segments: int, axis: int = 0) -> Tensor:
    """Sum slices of `a` along `axis` into `num_segments` buckets.

    This is the sum-reduction used for graph aggregation; its gradient is a
    gather with the same segment ids.
    """
    segments = np.asarray(segments, dtype=np.intp)
    ax = axis % a.ndim
    if segments.shape != (a.shape[ax],):
        raise GraphError("segment_sum: one segment id per slice required", next(_ids))
    out = _scatter_add(a.data, segments, num_segments, ax)
    return _make(out, "segment_sum", (a,), lambda g: (np.take(g, segments, axis=ax),))


# ---------------------------------------------------------------- backward

def _receiver_groups(src_idx: np.ndarray, dst_idx: np.ndarray, num_dst: int):
    """Sources regrouped as (num_dst, degree) when every receiver has the same
    degree, else None.  Message sums do not depend on edge order."""
    counts = np.bincount(dst_idx, minlength=num_dst)
    if num_dst == 0 or counts.min() != counts.max() or counts[0] == 0:
        return None
    order = np.argsort(dst_idx, kind="stable")
    return src_idx[order].reshape(num_dst, counts[0])


def edge_relu_sum(src: Tensor, dst: Tensor, bias, src_idx: np.ndarray,
                  dst_idx: np.ndarray) -> Tensor:
    """Graph message step along axis 0:

        out[n] = sum over edges e with dst_idx[e] == n of
                 relu(src[src_idx[e]] + dst[dst_idx[e]] + bias)

    Same value as take/add/relu/segment_sum composed, as one node so the
    per-edge intermediates never enter the graph.  ``out`` has dst's shape.
    """
    src, dst, bias = as_tensor(src), as_tensor(dst), as_tensor(bias)
    src_idx = np.asarray(src_idx, dtype=np.intp)
    dst_idx = np.asarray(dst_idx, dtype=np.intp)
    if src.shape[1:] != dst.shape[1:] or src_idx.shape != dst_idx.shape:
        raise GraphError(f"edge_relu_sum: incompatible shapes {src.shape}, {dst.shape}",
                         next(_ids))
    _broadcast_shape("edge_relu_sum", (src_idx.size,) + src.shape[1:], bias.shape)
    groups = _receiver_groups(src_idx, dst_idx, dst.shape[0])
    ns, nd = src.shape[0], dst.shape[0]
    if groups is not None:
        # uniform receiver degree: broadcast instead of gathering receivers
        pre = np.take(src.data, groups, axis=0)
        pre += dst.data[:, None]
        pre += bias.data
        np.maximum(pre, 0.0, out=pre)
        active = pre > 0
        flat = groups.reshape(-1)

        def bw(g):
            ge = g[:, None] * active
            return (_scatter_add(ge.reshape((-1,) + ge.shape[2:]), flat, ns, 0),
                    ge.sum(axis=1), _unbroadcast(ge, bias.shape))

        return _make(pre.sum(axis=1), "edge_relu_sum", (src, dst, bias), bw)

    pre = np.take(src.data, src_idx, axis=0)
    pre += np.take(dst.data, dst_idx, axis=0)
    pre += bias.data
    np.maximum(pre, 0.0, out=pre)
    active = pre > 0

    def bw_general(g):
        ge = np.take(g, dst_idx, axis=0)
        ge *= active
        return (_scatter_add(ge, src_idx, ns, 0), _scatter_add(ge, dst_idx, nd, 0),
                _unbroadcast(ge, bias.shape))

    return _make(_scatter_add(pre, dst_idx, nd, 0), "edge_relu_sum", (src, dst, bias),
                 bw_general)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from `root`, every node after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node._parents:
            if p.id not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, params: Mapping[str, Tensor] | None = None) -> dict:
    """Reverse-mode sweep from a scalar root.

    Returns gradients keyed like `params` (zeros for anything the root does
    not depend on).  Leaf tensors with requires_grad also get `.grad` set.
    """
    if root.data.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {root.shape}", root.id)
    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.data)}
    for node in reversed(topological_order(root)):
        g = grads.pop(node.id, None) if node._backward is not None else grads.get(node.id)
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg
    for node in topological_order(root):
        if node._backward is None and node.requires_grad:
            node.grad = grads.get(node.id, np.zeros_like(node.data))
    if params is None:
        return {}
    return {name: np.array(grads.get(p.id, np.zeros_like(p.data)), dtype=np.float64)
            for name, p in params.items()}


# --------------------------------------------------------------- optimizers

class Adam:
    """Adaptive-moment optimizer over a dict of named parameter tensors.

    With ``decoupled=True`` the weight decay is applied directly to the
    parameters (lr * decay * p) before the moment update, as in AdamW.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0, decoupled: bool = False):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.decoupled = decoupled
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    @property
    def kind(self) -> str:
        return "adamw" if self.decoupled else "adam"

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        for k in grads:
            if grads[k].shape != self.params[k].shape:
                raise GraphError(f"gradient for {k} has shape {grads[k].shape}, "
                                 f"parameter has {self.params[k].shape}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = grads.get(k)
            if g is None:
                continue
            w = p.data
            if self.weight_decay:
                if self.decoupled:
                    w = w - self.lr * self.weight_decay * w
                else:
                    g = g + self.weight_decay * w
            m = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            v = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            # new array rather than in-place: earlier graph values stay valid
            p.data = w - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.params:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: Mapping[str, np.ndarray], step_count: int) -> None:
        for k in self.params:
            self.m[k] = np.array(arrays[f"m/{k}"])
            self.v[k] = np.array(arrays[f"v/{k}"])
        self.step_count = step_count


class AdamW(Adam):
    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 1e-2):
        super().__init__(params, lr, betas, eps, weight_decay, decoupled=True)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5,
                 indices: Iterable | None = None) -> np.ndarray:
    """Central finite differences of scalar `f` w.r.t. entries of `x` (in place)."""
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return out
