"""Kernel backend selection.

The compiled extension is used when it imports; ``PIML_PURE_PYTHON=1`` forces
the reference implementation.
"""
from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("PIML_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

jacobi_eigh = _impl.jacobi_eigh
triangles = _impl.triangles

__all__ = ["BACKEND", "jacobi_eigh", "triangles"]
