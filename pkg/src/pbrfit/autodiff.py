"""Reverse-mode automatic differentiation on a flat append-only tape.

Node values are numpy float64 arrays; a plain scalar is a 0-d array. Arithmetic
records exactly one tape node per primitive op, constants record nothing, and
the same op functions run tape-free when no argument is a :class:`Var` (so the
identical numeric code serves both the differentiated path and brute-force
oracles). Values may carry extra "lane" axes (sample or pixel batches); the
backward pass sums gradients over broadcast axes, which keeps the per-lane
semantics of a scalar tape.
"""

from __future__ import annotations

import numpy as np


class StaleNodeError(RuntimeError):
    """Raised when backward() is asked for a node recorded before a tape reset."""


class NondeterminismError(RuntimeError):
    """Raised when a checkpointed region does not reproduce its forward value."""


def _as_value(x):
    return x.value if isinstance(x, Var) else x


def _as_array(x):
    return np.asarray(_as_value(x), dtype=np.float64)


def _unbroadcast(grad, shape):
    """Sum `grad` over axes that were added or broadcast relative to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(grad.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Var:
    """A tape-recorded value. Do not construct directly; use Tape.leaf/param or ops."""

    __slots__ = ("tape", "idx", "value", "epoch")

    # make `ndarray <op> Var` defer to our reflected operators instead of
    # numpy broadcasting Var as an object scalar
    __array_ufunc__ = None

    def __init__(self, tape, idx, value, epoch):
        self.tape = tape
        self.idx = idx
        self.value = value
        self.epoch = epoch

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        return self.value

    # arithmetic sugar
    def __add__(self, o):
        return add(self, o)

    __radd__ = __add__

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, o):
        return power(self, o)

    def __getitem__(self, key):
        return getitem(self, key)

    def __repr__(self):
        return f"Var(idx={self.idx}, value={self.value!r})"


class Tape:
    """Append-only op recording plus a registry of named parameter blocks."""

    def __init__(self):
        self.nodes = []  # (parent_ids, backward_fn)
        self.params = {}  # name -> (node idx, shape)
        self.epoch = 0
        self._grads = None

    def __len__(self):
        return len(self.nodes)

    def reset(self):
        self.nodes.clear()
        self.params.clear()
        self.epoch += 1
        self._grads = None

    def _record(self, value, parents, back):
        idx = len(self.nodes)
        self.nodes.append((parents, back))
        return Var(self, idx, value, self.epoch)

    def leaf(self, value):
        return self._record(np.asarray(value, dtype=np.float64), (), None)

    def param(self, name, value):
        v = self.leaf(value)
        self.params[name] = (v.idx, v.value.shape)
        return v

    def grad(self, var):
        """Gradient of the last backward() output w.r.t. `var` (zeros if untouched)."""
        if self._grads is None:
            raise RuntimeError("no backward() pass has run on this tape")
        g = self._grads[var.idx]
        return np.zeros_like(var.value) if g is None else g

    def backward(self, out, seed=None):
        """Reverse sweep from `out`; returns {block name -> gradient array}."""
        if not isinstance(out, Var) or out.tape is not self:
            raise ValueError("output is not a Var on this tape")
        if out.epoch != self.epoch:
            raise StaleNodeError("output node predates a tape reset")
        if seed is None:
            if out.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(out.value)
        grads = [None] * len(self.nodes)
        grads[out.idx] = np.broadcast_to(np.asarray(seed, dtype=np.float64), out.value.shape)
        for i in range(out.idx, -1, -1):
            g = grads[i]
            if g is None:
                continue
            parents, back = self.nodes[i]
            if not parents:
                continue
            for pid, pg in zip(parents, back(g)):
                if pg is None:
                    continue
                grads[pid] = pg if grads[pid] is None else grads[pid] + pg
        self._grads = grads
        result = {}
        for name, (idx, shape) in self.params.items():
            g = grads[idx]
            result[name] = np.zeros(shape) if g is None else np.asarray(g)
        return result


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, Var):
            if a.epoch != a.tape.epoch:
                raise StaleNodeError("operand predates a tape reset")
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands live on different tapes")
    return tape


def _unary(x, fval, dback):
    xv = _as_array(x)
    out = fval(xv)
    tape = _tape_of(x)
    if tape is None:
        return out

    def back(g):
        return (_unbroadcast(dback(g, xv, out), xv.shape),)

    return tape._record(out, (x.idx,), back)


def _binary(a, b, fval, da, db):
    av, bv = _as_array(a), _as_array(b)
    out = fval(av, bv)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    parents, backs = [], []
    if isinstance(a, Var):
        parents.append(a.idx)
        backs.append(lambda g: _unbroadcast(da(g, av, bv, out), av.shape))
    if isinstance(b, Var):
        parents.append(b.idx)
        backs.append(lambda g: _unbroadcast(db(g, av, bv, out), bv.shape))

    def back(g):
        return tuple(fn(g) for fn in backs)

    return tape._record(out, tuple(parents), back)


# elementwise primitives ------------------------------------------------------

def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(a, b, lambda x, y: x / y,
                   lambda g, x, y, o: g / y,
                   lambda g, x, y, o: -g * x / (y * y))


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, o: -g)


def power(a, b):
    # d/db needs log(a); only valid for a > 0, which all call sites satisfy
    return _binary(a, b, lambda x, y: x ** y,
                   lambda g, x, y, o: g * y * x ** (y - 1.0),
                   lambda g, x, y, o: g * o * np.log(x))


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, v, o: g / v)


def sqrt(x):
    return _unary(x, np.sqrt, lambda g, v, o: 0.5 * g / o)


def sin(x):
    return _unary(x, np.sin, lambda g, v, o: g * np.cos(v))


def cos(x):
    return _unary(x, np.cos, lambda g, v, o: -g * np.sin(v))


def arccos(x):
    return _unary(x, np.arccos, lambda g, v, o: -g / np.sqrt(np.maximum(1.0 - v * v, 1e-300)))


def arctan2(y, x):
    return _binary(y, x, np.arctan2,
                   lambda g, yv, xv, o: g * xv / (xv * xv + yv * yv),
                   lambda g, yv, xv, o: -g * yv / (xv * xv + yv * yv))


def absval(x):
    return _unary(x, np.abs, lambda g, v, o: g * np.where(v >= 0, 1.0, -1.0))


def minimum(a, b):
    # ties take the first argument's subgradient
    return _binary(a, b, np.minimum,
                   lambda g, x, y, o: g * (x <= y),
                   lambda g, x, y, o: g * (x > y))


def maximum(a, b):
    return _binary(a, b, np.maximum,
                   lambda g, x, y, o: g * (x >= y),
                   lambda g, x, y, o: g * (x < y))


def where(cond, a, b):
    """Branch select on a detached boolean condition."""
    c = np.asarray(_as_value(cond))
    return _binary(a, b, lambda x, y: np.where(c, x, y),
                   lambda g, x, y, o: g * c,
                   lambda g, x, y, o: g * (~c))


# shape / block primitives ----------------------------------------------------

def vsum(x, axis=None, keepdims=False):
    xv = _as_array(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    tape = _tape_of(x)
    if tape is None:
        return out

    def back(g):
        g = np.asarray(g, dtype=np.float64)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).copy(),)

    return tape._record(np.asarray(out, dtype=np.float64), (x.idx,), back)


def mean(x, axis=None):
    xv = _as_value(x)
    n = xv.size if axis is None else np.shape(xv)[axis]
    return vsum(x, axis=axis) / float(n)


def reshape(x, shape):
    xv = _as_array(x)
    out = xv.reshape(shape)
    tape = _tape_of(x)
    if tape is None:
        return out
    return tape._record(out, (x.idx,), lambda g: (np.asarray(g).reshape(xv.shape),))


def concat(parts, axis=-1):
    vals = [_as_array(p) for p in parts]
    out = np.concatenate(vals, axis=axis)
    tape = _tape_of(*parts)
    if tape is None:
        return out
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]
    parents, live = [], []
    for i, p in enumerate(parts):
        if isinstance(p, Var):
            parents.append(p.idx)
            live.append(i)

    def back(g):
        pieces = np.split(np.asarray(g), splits, axis=axis)
        return tuple(pieces[i] for i in live)

    return tape._record(out, tuple(parents), back)


def matmul(a, b):
    av, bv = _as_array(a), _as_array(b)
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out
    parents, backs = [], []
    if isinstance(a, Var):
        parents.append(a.idx)
        backs.append(lambda g: np.asarray(g) @ bv.T)
    if isinstance(b, Var):
        parents.append(b.idx)
        backs.append(lambda g: av.T @ np.asarray(g))
    return tape._record(out, tuple(parents), lambda g: tuple(fn(g) for fn in backs))


def take(x, idx):
    """Gather rows x[idx] along axis 0; backward scatter-adds."""
    xv = _as_array(x)
    ind = np.asarray(_as_value(idx))
    out = xv[ind]
    tape = _tape_of(x)
    if tape is None:
        return out

    def back(g):
        buf = np.zeros_like(xv)
        np.add.at(buf, ind, np.asarray(g))
        return (buf,)

    return tape._record(out, (x.idx,), back)


def put_rows(x, idx, n):
    """Scatter rows of x into a zero buffer of n rows at indices idx."""
    xv = _as_array(x)
    ind = np.asarray(_as_value(idx))
    buf = np.zeros((n,) + xv.shape[1:])
    buf[ind] = xv
    tape = _tape_of(x)
    if tape is None:
        return buf
    return tape._record(buf, (x.idx,), lambda g: (np.asarray(g)[ind],))


def getitem(x, key):
    xv = _as_array(x)
    out = xv[key]
    tape = _tape_of(x)
    if tape is None:
        return out

    def back(g):
        buf = np.zeros_like(xv)
        np.add.at(buf, key, np.asarray(g))
        return (buf,)

    return tape._record(np.asarray(out, dtype=np.float64), (x.idx,), back)


def detach(x):
    return _as_array(x)


def value(x):
    return _as_value(x)


# composed helpers (no new primitives) ----------------------------------------

def clip(x, lo, hi):
    return minimum(maximum(x, lo), hi)


def sigmoid(x):
    return 1.0 / (1.0 + exp(neg(clip(x, -60.0, 60.0))))


def softplus(x):
    return maximum(x, 0.0) + log(1.0 + exp(neg(absval(x))))


def dot3(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


def checkpoint_region(tape, fn, args):
    """Run `fn(*args)` untaped now; recompute it on a sub-tape during backward.

    `fn` must be deterministic in its inputs (frozen RNG); the recomputed
    forward value is compared against the stored one at 1e-7 absolute.
    Records a single node on `tape`, bounding its length for big regions.
    """
    vals = [_as_array(a) for a in args]
    out_val = np.asarray(_as_value(fn(*vals)), dtype=np.float64)
    var_pos = [i for i, a in enumerate(args) if isinstance(a, Var)]
    if tape is None or not var_pos:
        return out_val
    parents = tuple(args[i].idx for i in var_pos)

    def back(g):
        sub = Tape()
        leaves = list(vals)
        sub_vars = []
        for i in var_pos:
            leaves[i] = sub.leaf(vals[i])
            sub_vars.append(leaves[i])
        out2 = fn(*leaves)
        v2 = np.asarray(_as_value(out2), dtype=np.float64)
        if not np.allclose(v2, out_val, rtol=0.0, atol=1e-7):
            raise NondeterminismError("checkpointed region did not reproduce its forward value")
        if not isinstance(out2, Var):
            return tuple(np.zeros_like(vals[i]) for i in var_pos)
        sub.backward(out2, seed=np.asarray(g))
        return tuple(sub.grad(v) for v in sub_vars)

    return tape._record(out_val, parents, back)
