"""Minimal n-d tensor with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` holding its parents and a closure that
maps the output gradient to parent gradients. ``backward`` walks the graph in
reverse topological order. Data live in plain numpy arrays; the dtype of the
inputs is preserved (float32 for training, float64 for gradient checks).
"""
from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operators ---------------------------------------------------------
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

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def _raise_item(t: Tensor):
    raise ShapeError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: non-finite values in result of shape {data.shape}")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = fn
    out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _rowdot(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Dot product over the last axis, keeping it as a length-1 axis."""
    return np.einsum("...i,...i->...", a, b)[..., None]


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast("add", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(g, b.shape) if b.requires_grad else None)

    return _make(a.data + b.data, (a, b), fn, "add")


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast("sub", a, b)

    def fn(g):
        return (_unbroadcast(g, a.shape) if a.requires_grad else None,
                _unbroadcast(-g, b.shape) if b.requires_grad else None)

    return _make(a.data - b.data, (a, b), fn, "sub")


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _check_broadcast("mul", a, b)

    def fn(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), fn, "mul")


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    cdf = cdf.astype(x.dtype, copy=False)

    def fn(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf),)

    return _make(x.data * cdf, (x,), fn, "gelu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def fn(g):
        return (g * mask,)

    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), fn, "relu")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - _rowdot(g, y)),)

    return _make(y, (x,), fn, "softmax")


def self_attention(qkv: Tensor, heads: int) -> Tensor:
    """Multi-head scaled dot-product attention from packed projections.

    ``qkv`` is (B, N, 3 * D) laid out as [q | k | v], each split into
    ``heads`` contiguous chunks. Returns the concatenated head outputs
    (B, N, D). Equivalent to the composition of reshape, transpose, matmul,
    softmax and matmul, fused so the backward pass writes the packed gradient
    directly.
    """
    if qkv.ndim != 3 or qkv.shape[-1] % (3 * heads):
        raise ShapeError(f"self_attention: shape {qkv.shape} is not divisible into 3 x {heads} heads")
    B, N, D3 = qkv.shape
    D = D3 // 3
    dh = D // heads
    scale = 1.0 / math.sqrt(dh)
    q, k, v = qkv.data.reshape(B, N, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    z = q @ k.transpose(0, 1, 3, 2)
    z *= scale
    z -= z.max(axis=-1, keepdims=True)
    p = np.exp(z, out=z)
    p /= p.sum(axis=-1, keepdims=True)
    out = (p @ v).transpose(0, 2, 1, 3).reshape(B, N, D)

    def fn(g):
        go = g.reshape(B, N, heads, dh).transpose(0, 2, 1, 3)
        gqkv = np.empty((B, N, 3, heads, dh), dtype=g.dtype)
        gqkv[:, :, 2] = (p.transpose(0, 1, 3, 2) @ go).transpose(0, 2, 1, 3)
        ds = go @ v.transpose(0, 1, 3, 2)
        ds -= _rowdot(ds, p)
        ds *= p
        ds *= scale
        gqkv[:, :, 0] = (ds @ k).transpose(0, 2, 1, 3)
        gqkv[:, :, 1] = (ds.transpose(0, 1, 3, 2) @ q).transpose(0, 2, 1, 3)
        return (gqkv.reshape(B, N, D3),)

    return _make(out, (qkv,), fn, "self_attention")


def layer_norm(x: Tensor, weight: Tensor | None = None, bias: Tensor | None = None, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, then apply the optional affine terms."""
    d = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and p.shape != (d,):
            raise ShapeError(f"layer_norm: {name} shape {p.shape} does not match input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = _rowdot(xc, xc) / d
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    out = xhat
    if weight is not None:
        out = out * weight.data
    if bias is not None:
        out = out + bias.data
    parents = [x] + [p for p in (weight, bias) if p is not None]

    def fn(g):
        gx_hat = g * weight.data if weight is not None else g
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * (_rowdot(gx_hat, xhat) / d))
        grads = [gx]
        flat_g = g.reshape(-1, d)
        if weight is not None:
            grads.append((flat_g * xhat.reshape(-1, d)).sum(axis=0))
        if bias is not None:
            grads.append(flat_g.sum(axis=0))
        return tuple(grads)

    return _make(out.astype(x.dtype, copy=False), parents, fn, "layer_norm")


# -- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        k, n = b.shape
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (n,))

        def fn(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a.data.reshape(-1, k).T @ g2 if b.requires_grad else None
            return ga, gb
    else:
        try:
            np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
        except ValueError:
            raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None
        out = a.data @ b.data

        def fn(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
            return ga, gb

    return _make(out, (a, b), fn, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2, padding: int = 1) -> Tensor:
    """Channels-last 2-D transposed convolution.

    ``x`` is (B, H, W, Cin) and ``weight`` is (Cin, k, k, Cout). Output is
    (B, Ho, Wo, Cout) with ``Ho = (H - 1) * stride - 2 * padding + k``.
    """
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[1] != weight.shape[2] or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d: incompatible shapes {x.shape} and {weight.shape}")
    B, H, W, cin = x.shape
    _, k, _, cout = weight.shape
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv_transpose2d: bias shape {bias.shape} does not match weight {weight.shape}")
    ho = (H - 1) * stride - 2 * padding + k
    wo = (W - 1) * stride - 2 * padding + k
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv_transpose2d: empty output for input {x.shape} and weight {weight.shape}")
    hf = (H - 1) * stride + k
    wf = (W - 1) * stride + k
    cols = (x.data.reshape(-1, cin) @ weight.data.reshape(cin, -1)).reshape(B, H, W, k, k, cout)
    full = np.zeros((B, hf, wf, cout), dtype=cols.dtype)
    hs = (H - 1) * stride + 1
    ws = (W - 1) * stride + 1
    for ki in range(k):
        for kj in range(k):
            full[:, ki:ki + hs:stride, kj:kj + ws:stride, :] += cols[:, :, :, ki, kj, :]
    out = full[:, padding:padding + ho, padding:padding + wo, :]
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out)
    parents = [x, weight] + ([bias] if bias is not None else [])

    def fn(g):
        gfull = np.zeros((B, hf, wf, cout), dtype=g.dtype)
        gfull[:, padding:padding + ho, padding:padding + wo, :] = g
        gcols = np.empty((B, H, W, k, k, cout), dtype=g.dtype)
        for ki in range(k):
            for kj in range(k):
                gcols[:, :, :, ki, kj, :] = gfull[:, ki:ki + hs:stride, kj:kj + ws:stride, :]
        gcols = gcols.reshape(B * H * W, k * k * cout)
        gx = (gcols @ weight.data.reshape(cin, -1).T).reshape(x.shape)
        gw = (x.data.reshape(-1, cin).T @ gcols).reshape(weight.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.reshape(-1, cout).sum(axis=0))
        return tuple(grads)

    return _make(out, parents, fn, "conv_transpose2d")


# -- reductions and losses -------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _make(out, (x,), fn, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(tsum(x, axis, keepdims), 1.0 / n)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: incompatible shapes {pred.shape} and {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def fn(g):
        gp = ((2.0 / n) * g * diff).astype(pred.dtype, copy=False)
        return gp, (-gp if target.requires_grad else None)

    return _make(out, (pred, target), fn, "mse_loss")


# -- shape and indexing ----------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None

    def fn(g):
        return (g.reshape(x.shape),)

    return _make(out, (x,), fn, "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inv = tuple(np.argsort(axes))

    def fn(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(x.data, axes), (x,), fn, "transpose")


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis or p is None for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    out = np.array(x.data[idx])
    basic = _is_basic_index(idx)

    def fn(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g     # basic indexing never repeats an element
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _make(out, (x,), fn, "getitem")


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows per batch item: x (B, N, D), idx (B, K) -> (B, K, D)."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.ndim != 2 or idx.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: incompatible shapes {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[1]):
        raise ShapeError(f"gather_rows: index out of range for shape {x.shape}")
    b = np.arange(x.shape[0])[:, None]
    unique = all(len(np.unique(r)) == len(r) for r in idx)

    def fn(g):
        gx = np.zeros_like(x.data)
        if unique:
            gx[b, idx] = g
        else:
            np.add.at(gx, (b, idx), g)
        return (gx,)

    return _make(x.data[b, idx], (x,), fn, "gather_rows")


def scatter_rows(x: Tensor, idx: np.ndarray, n_rows: int) -> Tensor:
    """Place rows into a zero tensor: x (B, K, D), idx (B, K) -> (B, n_rows, D)."""
    idx = np.asarray(idx)
    if x.ndim != 3 or idx.shape != x.shape[:2]:
        raise ShapeError(f"scatter_rows: incompatible shapes {x.shape} and {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"scatter_rows: index out of range for {n_rows} rows")
    b = np.arange(x.shape[0])[:, None]
    out = np.zeros((x.shape[0], n_rows, x.shape[2]), dtype=x.dtype)
    np.add.at(out, (b, idx), x.data)

    def fn(g):
        return (g[b, idx],)

    return _make(out, (x,), fn, "scatter_rows")


# -- backward pass -----------------------------------------------------------

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise GraphError("backward: graph already consumed by a previous backward pass")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Leaf gradients accumulate across calls. The graph is released afterwards
    and a second pass over it raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise GraphError("backward: graph already consumed by a previous backward pass")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not depend on any tensor requiring grad")
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None and node.requires_grad:
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"backward: non-finite gradient for leaf of shape {node.shape}")
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._consumed = True
