"""Minimal reverse-mode automatic differentiation over numpy arrays.

Differentiable values are ``Tensor`` objects wrapping float ndarrays.  Every
op below is a module-level function that accepts either plain ndarrays or
Tensors and returns the matching kind, so numerical code can be written once
and run both as a plain forward pass and under differentiation.

Conventions baked in here and relied on elsewhere:
  * piecewise-linear kinks (abs at 0, clip at its bounds, maximum at ties)
    take subgradient 0,
  * discrete choices are made on detached values and are never part of the
    tape.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A node on the differentiation tape."""

    # Make numpy defer binary ops to our reflected operators instead of
    # trying to coerce Tensor into an object array.
    __array_ufunc__ = None
    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = tuple(parents)
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return self.data.item()

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return negative(self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def backward(self):
        """Backpropagate from a scalar; fills ``grad`` on reachable tensors."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar tensor")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if g is None or not isinstance(parent, Tensor):
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
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
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))
    return order


def is_tensor(x):
    return isinstance(x, Tensor)


def value(x):
    """Plain ndarray view of a Tensor or array-like (no tape link)."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def detach(x):
    return value(x)


def _unbroadcast(g, shape):
    """Sum gradient ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.add(a, b)
    da, db = value(a), value(b)
    out = da + db

    def vjp(g):
        return _unbroadcast(g, da.shape), _unbroadcast(g, db.shape)

    return Tensor(out, (a, b), vjp)


def subtract(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.subtract(a, b)
    da, db = value(a), value(b)
    out = da - db

    def vjp(g):
        return _unbroadcast(g, da.shape), _unbroadcast(-g, db.shape)

    return Tensor(out, (a, b), vjp)


def multiply(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.multiply(a, b)
    da, db = value(a), value(b)
    out = da * db

    def vjp(g):
        return _unbroadcast(g * db, da.shape), _unbroadcast(g * da, db.shape)

    return Tensor(out, (a, b), vjp)


def divide(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.divide(a, b)
    da, db = value(a), value(b)
    out = da / db

    def vjp(g):
        ga = _unbroadcast(g / db, da.shape)
        gb = _unbroadcast(-g * da / (db * db), db.shape)
        return ga, gb

    return Tensor(out, (a, b), vjp)


def negative(a):
    if not isinstance(a, Tensor):
        return np.negative(a)
    return Tensor(-a.data, (a,), lambda g: (-g,))


def power(a, p):
    """Elementwise power with a plain (non-differentiated) exponent."""
    if not isinstance(a, Tensor):
        return np.power(a, p)
    da = a.data
    out = da ** p

    def vjp(g):
        return (g * p * da ** (p - 1),)

    return Tensor(out, (a,), vjp)


def matmul(a, b):
    if not (isinstance(a, Tensor) or isinstance(b, Tensor)):
        return np.matmul(a, b)
    da, db = value(a), value(b)
    if da.ndim != 2 or db.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    out = da @ db

    def vjp(g):
        return g @ db.T, da.T @ g

    return Tensor(out, (a, b), vjp)


def sum(a, axis=None, keepdims=False):
    if not isinstance(a, Tensor):
        return np.sum(a, axis=axis, keepdims=keepdims)
    da = a.data
    out = da.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, da.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, da.shape).copy(),)

    return Tensor(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    da = value(a)
    if axis is None:
        n = da.size
    else:
        n = da.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) / float(n)


def absolute(a):
    """abs with subgradient 0 at 0."""
    if not isinstance(a, Tensor):
        return np.abs(a)
    da = a.data
    sign = np.sign(da)
    return Tensor(np.abs(da), (a,), lambda g: (g * sign,))


def sqrt(a):
    if not isinstance(a, Tensor):
        return np.sqrt(a)
    out_data = np.sqrt(a.data)

    def vjp(g):
        return (g / (2.0 * out_data),)

    return Tensor(out_data, (a,), vjp)


def exp(a):
    if not isinstance(a, Tensor):
        return np.exp(a)
    out_data = np.exp(a.data)
    return Tensor(out_data, (a,), lambda g: (g * out_data,))


def log(a):
    if not isinstance(a, Tensor):
        return np.log(a)
    da = a.data
    return Tensor(np.log(da), (a,), lambda g: (g / da,))


def maximum(a, lo):
    """Elementwise max against a plain bound; subgradient 0 at ties."""
    if not isinstance(a, Tensor):
        return np.maximum(a, lo)
    da = a.data
    mask = (da > lo).astype(da.dtype)
    return Tensor(np.maximum(da, lo), (a,), lambda g: (g * mask,))


def clip(a, lo, hi):
    """Clamp to [lo, hi]; subgradient 0 outside the open interval."""
    if not isinstance(a, Tensor):
        return np.clip(a, lo, hi)
    da = a.data
    mask = ((da > lo) & (da < hi)).astype(da.dtype)
    return Tensor(np.clip(da, lo, hi), (a,), lambda g: (g * mask,))


def transpose(a):
    if not isinstance(a, Tensor):
        return np.asarray(a).T
    return Tensor(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not isinstance(a, Tensor):
        return np.reshape(a, shape)
    da = a.data
    return Tensor(da.reshape(shape), (a,), lambda g: (g.reshape(da.shape),))


def concatenate(parts, axis=0):
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=axis)
    datas = [value(p) for p in parts]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(out, tuple(parts), vjp)


def take(a, idx):
    """Indexing/gather; gradient scatter-adds into the source."""
    if not isinstance(a, Tensor):
        return np.asarray(a)[idx]
    da = a.data
    out = da[idx]

    def vjp(g):
        z = np.zeros_like(da)
        np.add.at(z, idx, g)
        return (z,)

    return Tensor(out, (a,), vjp)


def index_add(n, idx, vals):
    """Segment sum: out[i] = sum of vals rows whose idx == i; out has n rows.

    vals may be (E,) or (E, d).  Gradient is a gather back along idx.
    """
    idx = np.asarray(idx)
    dv = value(vals)
    out = _segment_sum(n, idx, dv)
    if not isinstance(vals, Tensor):
        return out
    return Tensor(out, (vals,), lambda g: (g[idx],))


def _segment_sum(n, idx, vals):
    if vals.ndim == 1:
        return np.bincount(idx, weights=vals, minlength=n).astype(vals.dtype)
    # sort + reduceat is much faster than np.add.at for wide rows
    order = np.argsort(idx, kind="stable")
    si = idx[order]
    sv = vals[order]
    out = np.zeros((n,) + vals.shape[1:], dtype=vals.dtype)
    if len(si) == 0:
        return out
    starts = np.flatnonzero(np.r_[True, si[1:] != si[:-1]])
    out[si[starts]] = np.add.reduceat(sv, starts, axis=0)
    return out


def max_detached(a, axis=None, keepdims=False):
    """Max of the underlying values, returned as a constant (no gradient)."""
    return np.max(value(a), axis=axis, keepdims=keepdims)
