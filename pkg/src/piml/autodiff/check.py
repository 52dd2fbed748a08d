"""Finite-difference cross-checks for jet derivatives."""
from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .jet import Jet, closure


def central_difference(f: Callable, x, index: Sequence[int], h: float) -> float:
    """Product of central difference operators along each axis in ``index``.

    O(h^2) accurate; repeated axes use the widened 2h stencil.
    """
    x = np.asarray(x, dtype=np.float64)
    k = len(index)
    if k == 0:
        return float(f(x))
    total = 0.0
    for signs in itertools.product((1.0, -1.0), repeat=k):
        shift = np.zeros_like(x)
        for s, ax in zip(signs, index):
            shift[ax] += s * h
        total += np.prod(signs) * float(f(x + shift))
    return total / (2.0 * h) ** k


def jet_derivative(f: Callable, x, index: Sequence[int]) -> float:
    """Exact derivative of ``f`` at ``x`` by evaluating it on coordinate jets.

    ``f`` receives a list of coordinates (jets here, floats in FD probes) and
    must be written with the generic functions of :mod:`piml.autodiff.jet`.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    keys = closure([tuple(index)])
    coords = [Jet.variable(np.array([[xi]]), i, keys) for i, xi in enumerate(x)]
    out = f(coords)
    if not isinstance(out, Jet):
        return 0.0
    return float(out[tuple(index)].data.reshape(-1)[0])


def fd_check(f: Callable, x, index: Sequence[int], h: float) -> float:
    """Relative discrepancy between the jet derivative and central differences."""
    if h <= 0:
        raise ValueError("step h must be positive")
    ad = jet_derivative(f, x, index)
    fd = central_difference(lambda p: _as_float(f(list(p))), x, index, h)
    return abs(ad - fd) / max(1.0, abs(ad))


def _as_float(v) -> float:
    if isinstance(v, Jet):
        v = v.value
    if hasattr(v, "data"):
        v = v.data
    return float(np.asarray(v).reshape(-1)[0])
