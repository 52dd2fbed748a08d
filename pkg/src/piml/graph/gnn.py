"""Reference GNN layers: spectral convolution, message passing and graph attention.

Dense linear algebra throughout; node features are (N, F) arrays or Tensors.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..autodiff import Tensor, concat, parameter
from ..network import MLP, init_mlp, mlp_forward
from .. import kernels
from .calculus import OrientedGraph

__all__ = [
    "laplacian_eigendecomp", "normalized_laplacian", "graph_fourier", "inverse_graph_fourier",
    "spectral_conv", "MPNNParams", "init_mpnn", "mpnn_message", "mpnn_update", "mpnn_layer",
    "readout", "GATParams", "init_gat", "gat_logits", "gat_attention", "gat_layer",
    "read_features", "write_features",
]


def laplacian_eigendecomp(lap, tol: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """``(U, eigenvalues)`` with ascending eigenvalues and orthonormal columns."""
    a = np.asarray(lap, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not symmetric")
    w, v = kernels.jacobi_eigh(a, tol)
    order = np.argsort(w, kind="stable")
    return v[:, order], w[order]


def normalized_laplacian(graph: OrientedGraph) -> np.ndarray:
    """``I - D^-1/2 A D^-1/2``; isolated nodes get a zero row."""
    a = graph.adjacency()
    d = a.sum(axis=1)
    inv = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 0.0)
    out = -(inv[:, None] * a * inv[None, :])
    out[np.diag_indices_from(out)] += (d > 0).astype(np.float64)
    return 0.5 * (out + out.T)


def graph_fourier(u: np.ndarray, x):
    return u.T @ x


def inverse_graph_fourier(u: np.ndarray, xhat):
    return u @ xhat


def spectral_conv(u: np.ndarray, x, w):
    """``U (U^T X  *  U^T W)`` with an elementwise product of transformed signals."""
    xs = x.shape if isinstance(x, Tensor) else np.shape(x)
    ws = w.shape if isinstance(w, Tensor) else np.shape(w)
    if xs[0] != u.shape[0] or ws[0] != u.shape[0]:
        raise ValueError(f"signals need {u.shape[0]} rows, got {xs[0]} and {ws[0]}")
    if len(ws) > 1 and len(xs) > 1 and ws[1] not in (1, xs[1]):
        raise ValueError(f"filter width {ws[1]} does not match feature width {xs[1]}")
    ut = u.T
    return u @ ((ut @ x) * (ut @ w))


# message passing ----------------------------------------------------------------------

def _neighbors(graph: OrientedGraph):
    """Directed (target, source, edge id) lists covering both orientations."""
    e = graph.edges
    tgt = np.concatenate([e[:, 0], e[:, 1]])
    src = np.concatenate([e[:, 1], e[:, 0]])
    eid = np.concatenate([np.arange(len(e)), np.arange(len(e))])
    return tgt, src, eid


def _scatter_matrix(n: int, tgt: np.ndarray) -> np.ndarray:
    s = np.zeros((n, len(tgt)))
    s[tgt, np.arange(len(tgt))] = 1.0
    return s


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class MPNNParams:
    message: MLP  # input [h_i, h_j, e_ij]
    update: MLP  # input [h_i, m_i]


def init_mpnn(feat: int, edge_feat: int, hidden: int, out: int, seed: int = 0) -> MPNNParams:
    return MPNNParams(init_mlp([2 * feat + edge_feat, hidden, hidden], "tanh", seed),
                      init_mlp([feat + hidden, hidden, out], "tanh", seed + 1))


def mpnn_message(graph: OrientedGraph, h, message: Callable | MLP, e=None):
    """``m_i = sum_{j in N(i)} M(h_i, h_j, e_ij)``.

    ``message`` is an MLP on the concatenated inputs or a callable
    ``(h_i, h_j, e_ij) -> messages`` acting on row-stacked arrays.
    """
    h = _as_tensor(h)
    n = h.shape[0]
    if n != graph.n:
        raise ValueError(f"feature rows {n} do not match {graph.n} nodes")
    tgt, src, eid = _neighbors(graph)
    if len(tgt) == 0:
        width = message.out_dim if isinstance(message, MLP) else h.shape[1]
        return Tensor(np.zeros((n, width)))
    hi, hj = h[tgt], h[src]
    ee = None if e is None else _as_tensor(e)[eid]
    if isinstance(message, MLP):
        parts = [hi, hj] + ([] if ee is None else [ee])
        msg = mlp_forward(message, concat(parts, axis=1))
    else:
        msg = message(hi, hj, ee)
    return Tensor(_scatter_matrix(n, tgt)) @ msg


def mpnn_update(h, m, update: Callable | MLP):
    """``h_i' = U(h_i, m_i)`` applied to every node."""
    h, m = _as_tensor(h), _as_tensor(m)
    if isinstance(update, MLP):
        return mlp_forward(update, concat([h, m], axis=1))
    return update(h, m)


def mpnn_layer(graph: OrientedGraph, h, params: MPNNParams, e=None):
    return mpnn_update(h, mpnn_message(graph, h, params.message, e), params.update)


def readout(h) -> np.ndarray:
    """Sum over nodes in a canonical (lexicographic row) order, so permutations give identical bits."""
    a = np.asarray(h.data if isinstance(h, Tensor) else h, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.shape[0] == 0:
        raise ValueError("readout of an empty graph")
    order = np.lexsort(a.T[::-1])
    out = a[order[0]].copy()
    for r in order[1:]:
        out = out + a[r]
    return out


# attention -------------------------------------------------------------------------

@dataclass
class GATParams:
    weights: list  # per head, (F, F')
    attn: list  # per head, (2F', 1)
    combine: str = "concat"  # "concat" or "mean"


def init_gat(feat: int, out: int, heads: int = 1, combine: str = "concat", seed: int = 0) -> GATParams:
    rng = np.random.default_rng(seed)
    if combine not in ("concat", "mean"):
        raise ValueError(f"unknown head combination '{combine}'")
    bw = np.sqrt(6.0 / (feat + out))
    ba = np.sqrt(6.0 / (2 * out + 1))
    return GATParams([parameter(rng.uniform(-bw, bw, (feat, out))) for _ in range(heads)],
                     [parameter(rng.uniform(-ba, ba, (2 * out, 1))) for _ in range(heads)], combine)


def _attention_mask(graph: OrientedGraph, self_loops: bool) -> np.ndarray:
    mask = graph.adjacency() != 0
    if self_loops:
        mask = mask | np.eye(graph.n, dtype=bool)
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"node {int(np.argmax(empty))} has an empty neighbourhood (enable self-loops)")
    return mask


def gat_logits(z, a) -> np.ndarray | Tensor:
    """``c_ij = tanh(a^T [z_i, z_j])`` as a dense (N, N) matrix."""
    z = _as_tensor(z)
    f = z.shape[1]
    a = _as_tensor(a)
    left = z @ a[:f]
    right = z @ a[f:]
    n = z.shape[0]
    ones = Tensor(np.ones((1, n)))
    return (left @ ones + (right @ ones).T).tanh()


def gat_attention(graph: OrientedGraph, logits, self_loops: bool = True):
    """Masked softmax of (N, N) logits over each node's neighbourhood; max-subtracted."""
    mask = _attention_mask(graph, self_loops)
    c = _as_tensor(logits)
    m = mask.astype(np.float64)
    cmax = np.max(np.where(mask, c.data, -np.inf), axis=1, keepdims=True)
    ex = ((c - cmax) * m).exp() * m
    return ex / ex.sum(axis=1, keepdims=True)


def gat_layer(graph: OrientedGraph, h, params: GATParams, activation: str | None = "tanh",
              self_loops: bool = True):
    """Multi-head attention layer; heads are concatenated or averaged."""
    h = _as_tensor(h)
    outs = []
    for w, a in zip(params.weights, params.attn):
        z = h @ w
        alpha = gat_attention(graph, gat_logits(z, a), self_loops)
        agg = alpha @ z
        outs.append(agg if activation is None else getattr(agg, activation)())
    if params.combine == "concat":
        return outs[0] if len(outs) == 1 else concat(outs, axis=1)
    total = outs[0]
    for o in outs[1:]:
        total = total + o
    return total * (1.0 / len(outs))


# files -----------------------------------------------------------------------------

def read_features(path) -> np.ndarray:
    """CSV, one row per node; an optional non-numeric header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if k == 0:
                    continue
                raise ValueError(f"{path}: non-numeric value in row {k + 1}") from None
    if len({len(r) for r in rows}) > 1:
        raise ValueError(f"{path}: rows have different lengths")
    return np.array(rows, dtype=np.float64)


def write_features(x, path, header: Sequence[str] | None = None) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in x:
            w.writerow(["%.17g" % v for v in row])
