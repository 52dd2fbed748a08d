"""Reverse-mode automatic differentiation over dense float64 arrays.

Every differentiable operation is registered in ``OPS`` under a string tag
with a forward kernel and a vector-Jacobian rule.  Executing an operation on
``Tensor`` objects records the op tag, parents and attributes on the output,
which is all that is needed both for ``grad_params`` and for replaying a
recorded graph through ``forward_eval``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised as soon as an operation produces NaN or infinity."""


OPS: dict[str, tuple[Callable, Callable]] = {}


def register(tag: str):
    def deco(cls):
        OPS[tag] = (cls.forward, cls.backward)
        return cls

    return deco


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndiff = g.ndim - len(shape)
    if ndiff > 0:
        g = g.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "op", "attrs")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        if not np.isfinite(self.data).all():
            raise NonFiniteError("tensor constructed from non-finite data")
        self.requires_grad = requires_grad
        self.parents: tuple = ()
        self.op: str | None = None
        self.attrs: dict = {}

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # arithmetic
    def __add__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("add", self, other)

    def __radd__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("add", other, self)

    def __sub__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("sub", self, other)

    def __rsub__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("sub", other, self)

    def __mul__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("mul", self, other)

    def __rmul__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("mul", other, self)

    def __truediv__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("div", self, other)

    def __rtruediv__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("div", other, self)

    def __neg__(self):
        return apply("neg", self)

    def __matmul__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("matmul", self, other)

    def __rmatmul__(self, other):
        if hasattr(other, "coeffs"):
            return NotImplemented
        return apply("matmul", other, self)

    def __pow__(self, n: int):
        return apply("pow", self, n=int(n))

    def __getitem__(self, index):
        return apply("getitem", self, index=index)

    @property
    def T(self):
        return apply("transpose", self)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def tanh(self):
        return apply("tanh", self)

    def sin(self):
        return apply("sin", self)

    def cos(self):
        return apply("cos", self)

    def exp(self):
        return apply("exp", self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def apply(tag: str, *args, **attrs) -> Tensor:
    parents = tuple(a if isinstance(a, Tensor) else Tensor(a) for a in args)
    fwd = OPS[tag][0]
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):  # reported by the check below
        out = fwd(*[p.data for p in parents], **attrs)
    if not np.isfinite(out).all():
        raise NonFiniteError(f"operation '{tag}' produced non-finite values")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.op = tag
    t.attrs = attrs
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.parents = parents
    else:
        t.requires_grad = False
        t.parents = ()
    return t


# primitive ops ---------------------------------------------------------------

@register("add")
class _Add:
    @staticmethod
    def forward(a, b):
        return a + b

    @staticmethod
    def backward(g, out, a, b, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(g, b.shape) if needs[1] else None)


@register("sub")
class _Sub:
    @staticmethod
    def forward(a, b):
        return a - b

    @staticmethod
    def backward(g, out, a, b, needs):
        return (_unbroadcast(g, a.shape) if needs[0] else None,
                _unbroadcast(-g, b.shape) if needs[1] else None)


@register("mul")
class _Mul:
    @staticmethod
    def forward(a, b):
        return a * b

    @staticmethod
    def backward(g, out, a, b, needs):
        return (_unbroadcast(g * b, a.shape) if needs[0] else None,
                _unbroadcast(g * a, b.shape) if needs[1] else None)


@register("div")
class _Div:
    @staticmethod
    def forward(a, b):
        return a / b

    @staticmethod
    def backward(g, out, a, b, needs):
        return (_unbroadcast(g / b, a.shape) if needs[0] else None,
                _unbroadcast(-g * out / b, b.shape) if needs[1] else None)


@register("neg")
class _Neg:
    @staticmethod
    def forward(a):
        return -a

    @staticmethod
    def backward(g, out, a, needs):
        return (-g,)


@register("matmul")
class _Matmul:
    @staticmethod
    def forward(a, b):
        return a @ b

    @staticmethod
    def backward(g, out, a, b, needs):
        ga = gb = None
        if needs[0]:
            ga = _unbroadcast(g @ np.swapaxes(b, -1, -2), a.shape)
        if needs[1]:
            gb = _unbroadcast(np.swapaxes(a, -1, -2) @ g, b.shape)
        return ga, gb


@register("tanh")
class _Tanh:
    @staticmethod
    def forward(a):
        return np.tanh(a)

    @staticmethod
    def backward(g, out, a, needs):
        return (g * (1.0 - out * out),)


@register("sin")
class _Sin:
    @staticmethod
    def forward(a):
        return np.sin(a)

    @staticmethod
    def backward(g, out, a, needs):
        return (g * np.cos(a),)


@register("cos")
class _Cos:
    @staticmethod
    def forward(a):
        return np.cos(a)

    @staticmethod
    def backward(g, out, a, needs):
        return (-g * np.sin(a),)


@register("exp")
class _Exp:
    @staticmethod
    def forward(a):
        return np.exp(a)

    @staticmethod
    def backward(g, out, a, needs):
        return (g * out,)


@register("pow")
class _Pow:
    @staticmethod
    def forward(a, n):
        return a**n

    @staticmethod
    def backward(g, out, a, needs, n):
        if n == 0:
            return (np.zeros_like(a),)
        return (g * n * a ** (n - 1),)


@register("sum")
class _Sum:
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(np.sum(a, axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, out, a, needs, axis=None, keepdims=False):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)


@register("mean")
class _Mean:
    @staticmethod
    def forward(a, axis=None, keepdims=False):
        return np.asarray(np.mean(a, axis=axis, keepdims=keepdims))

    @staticmethod
    def backward(g, out, a, needs, axis=None, keepdims=False):
        n = a.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)


# structural ops: no arithmetic, only data movement

@register("reshape")
class _Reshape:
    @staticmethod
    def forward(a, shape):
        return a.reshape(shape)

    @staticmethod
    def backward(g, out, a, needs, shape):
        return (g.reshape(a.shape),)


@register("transpose")
class _Transpose:
    @staticmethod
    def forward(a):
        return np.swapaxes(a, -1, -2).copy() if a.ndim >= 2 else a.copy()

    @staticmethod
    def backward(g, out, a, needs):
        return (np.swapaxes(g, -1, -2) if a.ndim >= 2 else g,)


@register("getitem")
class _GetItem:
    @staticmethod
    def forward(a, index):
        return np.array(a[index])

    @staticmethod
    def backward(g, out, a, needs, index):
        ga = np.zeros_like(a)
        np.add.at(ga, index, g)
        return (ga,)


@register("concat")
class _Concat:
    @staticmethod
    def forward(*arrays, axis=0):
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(g, out, *arrays, needs, axis=0):
        sizes = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return tuple(np.split(g, sizes, axis=axis))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    return apply("concat", *tensors, axis=axis)


def _call_backward(node: Tensor, g: np.ndarray):
    bwd = OPS[node.op][1]
    needs = tuple(p.requires_grad for p in node.parents)
    return bwd(g, node.data, *[p.data for p in node.parents], needs=needs, **node.attrs)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def grad_params(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradient of a scalar ``loss`` with respect to each leaf in ``params``."""
    if loss.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    for p in params:
        if not p.requires_grad or p.parents:
            raise ValueError("parameter is not a trainable leaf on the tape")
    if not loss.requires_grad:
        return [np.zeros_like(p.data) for p in params]
    wanted = {id(p) for p in params}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or not node.parents:
            continue
        if id(node) not in wanted:
            del grads[id(node)]
        for p, gp in zip(node.parents, _call_backward(node, g)):
            if gp is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + gp
            else:
                grads[key] = gp
    return [grads.get(id(p), np.zeros_like(p.data)).reshape(p.shape) for p in params]


# recorded graphs ---------------------------------------------------------------

@dataclass
class TapeNode:
    op: str | None
    parents: tuple[int, ...]
    attrs: dict = field(default_factory=dict)
    value: np.ndarray | None = None  # constants only


@dataclass
class TapeGraph:
    """Topologically ordered op records; parents always precede children."""

    nodes: list[TapeNode]
    inputs: list[int]
    input_shapes: list[tuple]
    outputs: list[int]


def trace(fn: Callable[..., Any], *example_inputs) -> TapeGraph:
    """Record ``fn`` applied to fresh input tensors shaped like the examples."""
    leaves = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in example_inputs]
    out = fn(*leaves)
    outs = list(out) if isinstance(out, (list, tuple)) else [out]
    outs = [as_tensor(o) for o in outs]

    index: dict[int, int] = {}
    nodes: list[TapeNode] = []

    def visit(root: Tensor):
        stack = [(root, False)]
        while stack:
            t, done = stack.pop()
            if id(t) in index:
                continue
            if done or not t.parents:
                if t.parents:
                    rec = TapeNode(t.op, tuple(index[id(p)] for p in t.parents), dict(t.attrs))
                else:
                    rec = TapeNode(None, (), {}, value=t.data)
                index[id(t)] = len(nodes)
                nodes.append(rec)
                continue
            stack.append((t, True))
            for p in reversed(t.parents):
                if id(p) not in index:
                    stack.append((p, False))

    for leaf in leaves:
        visit(leaf)
    for o in outs:
        visit(o)
    return TapeGraph(
        nodes=nodes,
        inputs=[index[id(x)] for x in leaves],
        input_shapes=[x.shape for x in leaves],
        outputs=[index[id(o)] for o in outs],
    )


def forward_eval(graph: TapeGraph, inputs: Sequence) -> Tensor | list[Tensor]:
    """Replay a recorded graph on new input values."""
    if len(inputs) != len(graph.inputs):
        raise ValueError(f"expected {len(graph.inputs)} inputs, got {len(inputs)}")
    vals: dict[int, Tensor] = {}
    for slot, x, shape in zip(graph.inputs, inputs, graph.input_shapes):
        x = as_tensor(x)
        if x.shape != shape:
            raise ValueError(f"input shape {x.shape} does not match declared {shape}")
        vals[slot] = x
    for i, node in enumerate(graph.nodes):
        if i in vals:
            continue
        if node.op is None:
            vals[i] = Tensor(node.value)
        else:
            vals[i] = apply(node.op, *[vals[p] for p in node.parents], **node.attrs)
    outs = [vals[o] for o in graph.outputs]
    return outs[0] if len(outs) == 1 else outs
