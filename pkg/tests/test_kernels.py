import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from piml import _kernels_py, kernels

try:
    from piml import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def sym(seed, n):
    a = np.random.default_rng(seed).normal(size=(n, n))
    return a + a.T


def test_backend_is_reported():
    assert kernels.BACKEND in ("compiled", "python")
    if compiled is not None:
        assert kernels.BACKEND == "compiled"


def test_env_var_forces_fallback():
    env = dict(os.environ, PIML_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from piml import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_python_jacobi_against_numpy(seed, n):
    a = sym(seed, n)
    w, v = _kernels_py.jacobi_eigh(a)
    assert np.allclose(np.sort(w), np.linalg.eigvalsh(a), rtol=0, atol=1e-10)
    assert np.allclose(a @ v, v * w, rtol=0, atol=1e-9)


@needs_ext
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 12))
def test_backends_match_jacobi(seed, n):
    a = sym(seed, n)
    w1, v1 = _kernels_py.jacobi_eigh(a)
    w2, v2 = compiled.jacobi_eigh(a)
    assert np.allclose(w1, w2, rtol=0, atol=1e-12)
    assert np.allclose(v1, v2, rtol=0, atol=1e-10)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_backends_match_triangles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(0, 20))
    edges = np.array([(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.4],
                     dtype=np.int64).reshape(-1, 2)
    ref = _kernels_py.triangles(n, edges)
    a = np.zeros((n, n), bool)
    a[edges[:, 0], edges[:, 1]] = a[edges[:, 1], edges[:, 0]] = True
    want = [[i, j, k] for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n)
            if a[i, j] and a[j, k] and a[i, k]]
    assert np.asarray(ref).reshape(-1, 3).tolist() == want
    if compiled is not None:
        assert np.array_equal(np.asarray(compiled.triangles(n, edges)).reshape(-1, 3), np.asarray(ref).reshape(-1, 3))
