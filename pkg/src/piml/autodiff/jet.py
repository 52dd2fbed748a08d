"""Truncated multivariate Taylor jets for input derivatives up to order 3.

A ``Jet`` stores partial derivatives of a batched quantity keyed by sorted
tuples of input axes: ``()`` is the value, ``(0,)`` is d/dx0, ``(0, 1)`` is
d2/dx0dx1 and so on.  Sorting the key makes mixed partials share storage, so
Clairaut symmetry is structural.  Every coefficient is a ``Tensor``, so the
jet arithmetic below is recorded on the reverse tape and parameter gradients
of derivative-dependent losses come out exact.

Each jet also carries a downward-closed key set: the derivatives it is able
to represent.  Binary operations intersect key sets, missing entries inside
the key set are exact zeros.
"""
from __future__ import annotations

import itertools
from functools import lru_cache
from math import factorial
from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, as_tensor

MAX_ORDER = 3

Key = tuple


def merge(a: Key, b: Key) -> Key:
    return tuple(sorted(a + b))


def full_keys(dim: int, order: int) -> frozenset:
    if order > MAX_ORDER:
        raise ValueError(f"derivative order {order} exceeds supported maximum {MAX_ORDER}")
    keys = [()]
    for k in range(1, order + 1):
        keys.extend(itertools.combinations_with_replacement(range(dim), k))
    return frozenset(keys)


def closure(keys: Iterable[Key]) -> frozenset:
    """All sub-multisets of the given keys (always contains ``()``)."""
    out = {()}
    for key in keys:
        key = tuple(sorted(key))
        if len(key) > MAX_ORDER:
            raise ValueError(f"derivative order {len(key)} exceeds supported maximum {MAX_ORDER}")
        for r in range(1, len(key) + 1):
            out.update(itertools.combinations(key, r))
    return frozenset(out)


@lru_cache(maxsize=None)
def _splits(key: Key) -> tuple:
    """Leibniz terms: (left key, right key, multiplicity) over position subsets."""
    counts: dict = {}
    n = len(key)
    for mask in range(1 << n):
        left = tuple(key[i] for i in range(n) if mask >> i & 1)
        right = tuple(key[i] for i in range(n) if not mask >> i & 1)
        counts[(left, right)] = counts.get((left, right), 0) + 1
    return tuple((l, r, m) for (l, r), m in counts.items())


def _set_partitions(items: list):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


@lru_cache(maxsize=None)
def _partitions(key: Key) -> tuple:
    """Faa di Bruno terms: (number of blocks, block keys, multiplicity)."""
    counts: dict = {}
    for part in _set_partitions(list(range(len(key)))):
        blocks = tuple(sorted(tuple(key[i] for i in b) for b in part))
        counts[blocks] = counts.get(blocks, 0) + 1
    return tuple((len(b), b, m) for b, m in sorted(counts.items(), key=lambda kv: (len(kv[0]), kv[0])))


def _scale(t: Tensor, m: int) -> Tensor:
    return t if m == 1 else t * float(m)


class Jet:
    __slots__ = ("coeffs", "keys")

    def __init__(self, coeffs: dict, keys: frozenset):
        if () not in coeffs:
            raise ValueError("jet requires a value entry")
        self.coeffs = coeffs
        self.keys = keys

    # construction -----------------------------------------------------------------
    @classmethod
    def constant(cls, value, keys: frozenset) -> "Jet":
        return cls({(): as_tensor(value)}, keys)

    @classmethod
    def variable(cls, value, axis: int, keys: frozenset) -> "Jet":
        """Coordinate function x_axis evaluated at a column of points."""
        v = as_tensor(value)
        coeffs = {(): v}
        if (axis,) in keys:
            coeffs[(axis,)] = Tensor(np.ones((1,) * max(v.ndim, 1)))
        return cls(coeffs, keys)

    @classmethod
    def inputs(cls, x, keys: frozenset) -> "Jet":
        """Jet of the identity map on a (batch, dim) input matrix."""
        x = np.asarray(x, dtype=np.float64)
        coeffs = {(): Tensor(x)}
        for i in range(x.shape[1]):
            if (i,) in keys:
                e = np.zeros((1, x.shape[1]))
                e[0, i] = 1.0
                coeffs[(i,)] = Tensor(e)
        return cls(coeffs, keys)

    # access -----------------------------------------------------------------------
    @property
    def value(self) -> Tensor:
        return self.coeffs[()]

    @property
    def order(self) -> int:
        return max(len(k) for k in self.keys)

    def __getitem__(self, key) -> Tensor:
        key = tuple(sorted(key))
        if key not in self.keys:
            raise KeyError(f"derivative {key} not carried by this jet (order budget)")
        c = self.coeffs.get(key)
        if c is None:
            return Tensor(np.zeros(self.value.shape))
        return c

    def d(self, axes) -> "Jet":
        """Jet of the partial derivative along ``axes`` (shifted coefficients)."""
        axes = tuple(sorted(axes))
        if axes not in self.keys:
            raise KeyError(f"derivative {axes} exceeds this jet's order budget")
        keys = frozenset(t for t in self.keys if merge(axes, t) in self.keys)
        coeffs = {}
        for t in keys:
            c = self.coeffs.get(merge(axes, t))
            if c is not None:
                coeffs[t] = c
        if () not in coeffs:
            coeffs[()] = Tensor(np.zeros(self.value.shape))
        return Jet(coeffs, keys)

    def truncate(self, keys: frozenset) -> "Jet":
        keys = self.keys & keys
        return Jet({k: c for k, c in self.coeffs.items() if k in keys}, keys)

    # arithmetic -------------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, Jet):
            coeffs = dict(self.coeffs)
            coeffs[()] = coeffs[()] + other
            return Jet(coeffs, self.keys)
        keys = self.keys & other.keys
        coeffs = {}
        for k in keys:
            a = self.coeffs.get(k)
            b = other.coeffs.get(k)
            if a is not None and b is not None:
                coeffs[k] = a + b
            elif a is not None:
                coeffs[k] = a
            elif b is not None:
                coeffs[k] = b
        return Jet(coeffs, keys)

    __radd__ = __add__

    def __neg__(self):
        return Jet({k: -c for k, c in self.coeffs.items()}, self.keys)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet({k: c * other for k, c in self.coeffs.items()}, self.keys)
        return _bilinear(self, other, lambda a, b: a * b)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if not isinstance(other, Jet):
            return Jet({k: c @ other for k, c in self.coeffs.items()}, self.keys)
        return _bilinear(self, other, lambda a, b: a @ b)

    def __rmatmul__(self, other):
        return Jet({k: other @ c for k, c in self.coeffs.items()}, self.keys)

    def __truediv__(self, other):
        if not isinstance(other, Jet):
            return Jet({k: c / other for k, c in self.coeffs.items()}, self.keys)
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, n: int):
        n = int(n)
        if n < 0:
            return reciprocal(self) ** (-n)

        def derivs(v, order):
            out = []
            for k in range(order + 1):
                if k > n:
                    break
                c = factorial(n) // factorial(n - k)
                out.append(v ** (n - k) * float(c) if n - k > 0 else Tensor(np.full(v.shape, float(c))))
            return out

        return unary(self, derivs)

    def sum(self, axis=None, keepdims=False):
        return Jet({k: c.sum(axis=axis, keepdims=keepdims) for k, c in self.coeffs.items()}, self.keys)

    def reshape(self, *shape):
        return Jet({k: c.reshape(*shape) for k, c in self.coeffs.items()}, self.keys)

    def tanh(self):
        return tanh(self)

    def sin(self):
        return sin(self)

    def cos(self):
        return cos(self)

    def exp(self):
        return exp(self)

    def __repr__(self) -> str:
        return f"Jet(keys={sorted(self.keys, key=lambda k: (len(k), k))}, shape={self.value.shape})"


def _bilinear(a: Jet, b: Jet, op: Callable) -> Jet:
    keys = a.keys & b.keys
    coeffs = {}
    for key in keys:
        acc = None
        for ka, kb, m in _splits(key):
            ca = a.coeffs.get(ka)
            if ca is None:
                continue
            cb = b.coeffs.get(kb)
            if cb is None:
                continue
            term = _scale(op(ca, cb), m)
            acc = term if acc is None else acc + term
        if acc is not None:
            coeffs[key] = acc
    if () not in coeffs:
        coeffs[()] = op(a.value, b.value)
    return Jet(coeffs, keys)


def unary(a: Jet, derivs: Callable[[Tensor, int], list]) -> Jet:
    """Compose a scalar function with a jet.

    ``derivs(v, n)`` returns ``[f(v), f'(v), ..., f^(n)(v)]`` built from tape
    ops (entries past the end are treated as zero).
    """
    present = [k for k in a.keys if k]
    n = max((len(k) for k in present), default=0)
    ds = derivs(a.value, n)
    coeffs = {(): ds[0]}
    products: dict = {}
    for key in present:
        acc = None
        for nblocks, blocks, m in _partitions(key):
            if nblocks >= len(ds):
                continue
            prod = products.get(blocks)
            if prod is None:
                if any(b not in a.coeffs for b in blocks):
                    continue
                prod = a.coeffs[blocks[0]]
                for b in blocks[1:]:
                    prod = prod * a.coeffs[b]
                products[blocks] = prod
            term = _scale(ds[nblocks] * prod, m)
            acc = term if acc is None else acc + term
        if acc is not None:
            coeffs[key] = acc
    return Jet(coeffs, a.keys)


# derivative towers of the supported primitives, each expressed with tape ops

def _tanh_derivs(v: Tensor, n: int) -> list:
    t = v.tanh()
    out = [t]
    if n >= 1:
        d1 = 1.0 - t * t
        out.append(d1)
    if n >= 2:
        out.append(-2.0 * t * d1)
    if n >= 3:
        out.append(d1 * (6.0 * t * t - 2.0))
    return out


def _sin_derivs(v: Tensor, n: int) -> list:
    s = v.sin()
    if n == 0:
        return [s]
    c = v.cos()
    return [s, c, -s, -c][: n + 1]


def _cos_derivs(v: Tensor, n: int) -> list:
    c = v.cos()
    if n == 0:
        return [c]
    s = v.sin()
    return [c, -s, -c, s][: n + 1]


def _exp_derivs(v: Tensor, n: int) -> list:
    e = v.exp()
    return [e] * (n + 1)


def _recip_derivs(v: Tensor, n: int) -> list:
    r = 1.0 / v
    out = [r]
    for k in range(1, n + 1):
        out.append(((-1.0) ** k * factorial(k)) * r ** (k + 1))
    return out


def reciprocal(a: Jet) -> Jet:
    return unary(a, _recip_derivs)


def _dispatch(jet_derivs, tensor_op, np_op):
    def fn(x):
        if isinstance(x, Jet):
            return unary(x, jet_derivs)
        if isinstance(x, Tensor):
            return tensor_op(x)
        return np_op(x)

    return fn


tanh = _dispatch(_tanh_derivs, Tensor.tanh, np.tanh)
sin = _dispatch(_sin_derivs, Tensor.sin, np.sin)
cos = _dispatch(_cos_derivs, Tensor.cos, np.cos)
exp = _dispatch(_exp_derivs, Tensor.exp, np.exp)

ACTIVATIONS = {"tanh": tanh, "sin": sin, "cos": cos}
