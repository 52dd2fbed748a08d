from .tensor import (
    NonFiniteError,
    OPS,
    TapeGraph,
    TapeNode,
    Tensor,
    apply,
    as_tensor,
    concat,
    forward_eval,
    grad_params,
    parameter,
    trace,
)
from .jet import MAX_ORDER, Jet, closure, cos, exp, full_keys, merge, reciprocal, sin, tanh, unary
from .check import central_difference, fd_check, jet_derivative

__all__ = [
    "NonFiniteError", "OPS", "TapeGraph", "TapeNode", "Tensor", "apply", "as_tensor",
    "concat", "forward_eval", "grad_params", "parameter", "trace",
    "MAX_ORDER", "Jet", "closure", "cos", "exp", "full_keys", "merge", "reciprocal",
    "sin", "tanh", "unary", "central_difference", "fd_check", "jet_derivative",
]
