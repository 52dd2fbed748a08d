"""Combinatorial exterior calculus on graphs, graph learning tasks, stencils and GMLS.

Orientation: edges are stored as ``(i, j)`` with ``i < j`` and triangles as
``(i, j, k)`` with ``i < j < k``; reversed index order reads the negated value.

Sign convention: ``div_adj`` is the literal nodewise sum ``sum_j psi_ij`` (not
the inner-product adjoint, which is its negation).  Hence
``laplacian0 = div_adj o grad0 = -(D - A)`` and
``<grad0 phi, psi> = -<phi, div_adj psi>``.  ``curl_adj`` follows the same
convention (minus the transpose of ``curl1``), so ``hodge_laplacian1`` is the
negative semidefinite edge Laplacian ``-(B1^T B1 + B2^T B2)``.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..autodiff import Jet, Tensor, full_keys, grad_params, parameter
from ..network import AdamState, MLP, adam_step, init_mlp, mlp_forward
from .. import kernels


__all__ = [
    "OrientedGraph", "CliqueComplex", "build_complex", "Cochain", "grad0", "curl1", "div_adj",
    "curl_adj", "laplacian0", "graph_laplacian_matrix", "hodge_laplacian1", "diffusion_step",
    "fit_diffusion", "FluxModel", "mlp_flux", "polynomial_flux", "zero_flux", "flux_operator",
    "nonlinear_flux_solve", "flux_model_loss", "fit_flux_model", "flux_residual", "Stencil",
    "chain_neighborhoods", "stencil_apply", "fit_stencil", "monomial_exponents", "quartic_kernel",
    "gmls_lift", "read_edge_list", "write_edge_list", "random_graph",
]


@dataclass(frozen=True)
class OrientedGraph:
    n: int
    edges: np.ndarray  # (E, 2) canonical, lexicographically sorted
    weights: np.ndarray | None = None

    @classmethod
    def from_edges(cls, n: int, edges, weights=None) -> "OrientedGraph":
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(e) and (e.min() < 0 or e.max() >= n):
            raise ValueError(f"edge index out of range for {n} nodes")
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self-loops are not allowed")
        canon = np.sort(e, axis=1)
        order = np.lexsort((canon[:, 1], canon[:, 0]))
        canon = canon[order]
        if len(canon) > 1 and np.any(np.all(canon[1:] == canon[:-1], axis=1)):
            raise ValueError("duplicate edge")
        w = None
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if len(w) != len(e):
                raise ValueError("one weight per edge required")
            if np.any(w <= 0):
                raise ValueError("edge weights must be positive")
            w = w[order]
        return cls(int(n), canon, w)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def edge_weights(self) -> np.ndarray:
        return np.ones(self.num_edges) if self.weights is None else self.weights

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        w = self.edge_weights()
        a[self.edges[:, 0], self.edges[:, 1]] = w
        a[self.edges[:, 1], self.edges[:, 0]] = w
        return a

    def num_components(self) -> int:
        if self.n == 0:
            return 0
        m = coo_matrix((np.ones(self.num_edges), (self.edges[:, 0], self.edges[:, 1])), shape=(self.n, self.n))
        return int(connected_components(m, directed=False)[0])

    def permuted(self, perm) -> "OrientedGraph":
        """Relabel node ``i`` as ``perm[i]``."""
        perm = np.asarray(perm)
        return OrientedGraph.from_edges(self.n, perm[self.edges], self.weights)


@dataclass(frozen=True)
class CliqueComplex:
    graph: OrientedGraph
    triangles: np.ndarray  # (T, 3) canonical, lexicographic
    _edge_index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.graph.n)

    @property
    def edges(self) -> np.ndarray:
        return self.graph.edges

    def cliques(self, degree: int) -> np.ndarray:
        return [self.nodes.reshape(-1, 1), self.edges, self.triangles][degree]

    def size(self, degree: int) -> int:
        return len(self.cliques(degree))

    def edge_id(self, i: int, j: int) -> int:
        return self._edge_index[(min(i, j), max(i, j))]

    def incidence0(self) -> np.ndarray:
        """Matrix of ``grad0``: (E, N) with -1 at i and +1 at j."""
        b = np.zeros((self.size(1), self.graph.n))
        r = np.arange(self.size(1))
        b[r, self.edges[:, 0]] = -1.0
        b[r, self.edges[:, 1]] = 1.0
        return b

    def incidence1(self) -> np.ndarray:
        """Matrix of ``curl1``: (T, E), +1 on (i,j) and (j,k), -1 on (i,k)."""
        b = np.zeros((self.size(2), self.size(1)))
        for t, (i, j, k) in enumerate(self.triangles):
            b[t, self.edge_id(i, j)] += 1.0
            b[t, self.edge_id(j, k)] += 1.0
            b[t, self.edge_id(i, k)] -= 1.0
        return b


def build_complex(graph: OrientedGraph) -> CliqueComplex:
    tri = kernels.triangles(graph.n, graph.edges)
    idx = {(int(i), int(j)): e for e, (i, j) in enumerate(graph.edges)}
    return CliqueComplex(graph, tri, idx)


def _parity(key: Sequence[int]) -> tuple[tuple, int]:
    """Sorted clique and the sign of the sorting permutation."""
    key = list(key)
    sign = 1
    for a in range(len(key)):
        for b in range(len(key) - 1 - a):
            if key[b] > key[b + 1]:
                key[b], key[b + 1] = key[b + 1], key[b]
                sign = -sign
    if len(set(key)) != len(key):
        raise KeyError(f"clique {tuple(key)} repeats a node")
    return tuple(key), sign


class Cochain:
    """Values on canonical k-cliques with skew-symmetric access."""

    def __init__(self, complex_: CliqueComplex, degree: int, values):
        if degree not in (0, 1, 2):
            raise ValueError("cochain degree must be 0, 1 or 2")
        v = np.asarray(values, dtype=np.float64).reshape(-1) if not isinstance(values, Tensor) else values
        size = complex_.size(degree)
        n = v.shape[0] if not isinstance(v, Tensor) else v.shape[0]
        if n != size:
            raise ValueError(f"degree-{degree} cochain needs {size} values, got {n}")
        self.complex = complex_
        self.degree = degree
        self.values = v
        self._index = None

    def _lookup(self) -> dict:
        if self._index is None:
            self._index = {tuple(int(i) for i in c): r for r, c in enumerate(self.complex.cliques(self.degree))}
        return self._index

    def __getitem__(self, clique):
        if self.degree == 0 and np.isscalar(clique):
            return float(self.values[int(clique)])
        key, sign = _parity(clique if not np.isscalar(clique) else (clique,))
        if len(key) != self.degree + 1:
            raise KeyError(f"degree-{self.degree} cochain indexed by a {len(key)}-clique")
        try:
            r = self._lookup()[key]
        except KeyError:
            raise KeyError(f"clique {key} is not in the complex") from None
        return sign * float(self.values[r])

    def __len__(self) -> int:
        return self.complex.size(self.degree)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    def to_json(self) -> str:
        cl = self.complex.cliques(self.degree)
        entries = [[[int(i) for i in c], float(v)] for c, v in zip(cl, np.asarray(self.values))]
        return json.dumps({"degree": self.degree, "entries": entries})

    @classmethod
    def from_json(cls, complex_: CliqueComplex, text: str) -> "Cochain":
        d = json.loads(text)
        out = cls(complex_, int(d["degree"]), np.zeros(complex_.size(int(d["degree"]))))
        seen = set()
        for clique, value in d["entries"]:
            key, sign = _parity(clique)
            r = out._lookup().get(key)
            if r is None:
                raise KeyError(f"clique {key} is not in the complex")
            out.values[r] = sign * float(value)
            seen.add(r)
        if len(seen) != len(out):
            raise ValueError("cochain file does not cover every clique")
        return out


def _values(c, complex_, degree):
    if isinstance(c, Cochain):
        if c.degree != degree:
            raise ValueError(f"expected a degree-{degree} cochain, got degree {c.degree}")
        return np.asarray(c.values, dtype=np.float64)
    v = np.asarray(c, dtype=np.float64).reshape(-1)
    if len(v) != complex_.size(degree):
        raise ValueError(f"degree-{degree} cochain needs {complex_.size(degree)} values, got {len(v)}")
    return v


def grad0(cx: CliqueComplex, phi) -> Cochain:
    """``(grad phi)_ij = phi_j - phi_i``."""
    p = _values(phi, cx, 0)
    return Cochain(cx, 1, p[cx.edges[:, 1]] - p[cx.edges[:, 0]])


def curl1(cx: CliqueComplex, psi) -> Cochain:
    """``(curl psi)_ijk = psi_ij + psi_jk + psi_ki``."""
    s = _values(psi, cx, 1)
    if len(cx.triangles) == 0:
        return Cochain(cx, 2, np.zeros(0))
    ij = np.array([cx.edge_id(i, j) for i, j, _ in cx.triangles])
    jk = np.array([cx.edge_id(j, k) for _, j, k in cx.triangles])
    ik = np.array([cx.edge_id(i, k) for i, _, k in cx.triangles])
    return Cochain(cx, 2, s[ij] + s[jk] - s[ik])


def div_adj(cx: CliqueComplex, psi) -> Cochain:
    """``(grad* psi)_i = sum_{j ~ i} w_ij psi_ij``, read with skew access."""
    s = _values(psi, cx, 1) * cx.graph.edge_weights()
    out = np.zeros(cx.graph.n)
    np.add.at(out, cx.edges[:, 0], s)
    np.add.at(out, cx.edges[:, 1], -s)
    return Cochain(cx, 0, out)


def curl_adj(cx: CliqueComplex, chi) -> Cochain:
    """Same sign convention as ``div_adj``: minus the transpose of ``curl1``."""
    c = _values(chi, cx, 2)
    out = np.zeros(cx.size(1))
    for t, (i, j, k) in enumerate(cx.triangles):
        out[cx.edge_id(i, j)] -= c[t]
        out[cx.edge_id(j, k)] -= c[t]
        out[cx.edge_id(i, k)] += c[t]
    return Cochain(cx, 1, out)


def laplacian0(cx: CliqueComplex, phi) -> Cochain:
    return div_adj(cx, grad0(cx, phi))


def graph_laplacian_matrix(graph: OrientedGraph) -> np.ndarray:
    """``L = D - A`` with weighted degrees."""
    a = graph.adjacency()
    return np.diag(a.sum(axis=1)) - a


def hodge_laplacian1(cx: CliqueComplex, psi) -> Cochain:
    """``grad0 o div_adj + curl_adj o curl1`` on edge cochains."""
    a = grad0(cx, div_adj(cx, psi)).values
    b = curl_adj(cx, curl1(cx, psi)).values
    return Cochain(cx, 1, a + b)


# diffusion ------------------------------------------------------------------------

def diffusion_step(cx: CliqueComplex, x, alpha: float) -> Cochain:
    """Explicit Euler ``x + alpha * laplacian0(x)``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    v = _values(x, cx, 0)
    return Cochain(cx, 0, v + alpha * laplacian0(cx, v).values)


def fit_diffusion(cx: CliqueComplex, trajectory: Sequence) -> float:
    """Closed-form least-squares diffusivity from consecutive snapshots."""
    if len(trajectory) < 2:
        raise ValueError("need at least two snapshots")
    xs = [_values(x, cx, 0) for x in trajectory]
    num = den = 0.0
    for a, b in zip(xs[:-1], xs[1:]):
        lap = laplacian0(cx, a).values
        num += float(lap @ (b - a))
        den += float(lap @ lap)
    scale = max(float(np.max(np.abs(np.concatenate(xs)))), 1e-300)
    if den <= (1e-14 * scale) ** 2:
        raise ValueError("trajectory is unidentifiable: its Laplacian vanishes")
    return num / den


# nonlinear conservative flux --------------------------------------------------------

@dataclass
class FluxModel:
    """Edge-wise flux ``N(g)``, either ``net(g) - net(0)`` or ``sum_k c_k g^k``."""

    net: MLP | None = None
    coeffs: Tensor | None = None  # (1, K) weights of g, g^2, ..., g^K

    def parameters(self) -> list[Tensor]:
        if self.net is not None:
            return self.net.parameters()
        return [] if self.coeffs is None else [self.coeffs]

    def __call__(self, g):
        """``g`` is an (E, 1) array, Tensor or Jet."""
        if self.net is not None:
            zero = mlp_forward(self.net, np.zeros((1, 1)))
            return mlp_forward(self.net, g) - zero
        if self.coeffs is None:
            return g * 0.0
        out, power = None, g
        for k in range(self.coeffs.shape[1]):
            term = power * self.coeffs[:, k:k + 1]
            out = term if out is None else out + term
            power = power * g
        return out


def mlp_flux(hidden: Sequence[int] = (16, 16), activation: str = "tanh", seed: int = 0) -> FluxModel:
    return FluxModel(net=init_mlp([1, *hidden, 1], activation, seed))


def polynomial_flux(coeffs) -> FluxModel:
    return FluxModel(coeffs=parameter(np.asarray(coeffs, dtype=np.float64).reshape(1, -1)))


def zero_flux() -> FluxModel:
    return FluxModel()


def _flux_and_slope(flux: FluxModel, g: np.ndarray):
    keys = full_keys(1, 1)
    out = flux(Jet.variable(g.reshape(-1, 1), 0, keys)) if flux.parameters() else None
    if out is None:
        return np.zeros_like(g), np.zeros_like(g)
    v = out.value.data.reshape(-1)
    d = out[(0,)].data
    return v, np.broadcast_to(d, out.value.shape).reshape(-1)


def flux_operator(cx: CliqueComplex, u, flux: FluxModel) -> np.ndarray:
    """``div_adj(grad0 u + N(grad0 u))``."""
    g = grad0(cx, u).values
    n, _ = _flux_and_slope(flux, g)
    return div_adj(cx, g + n).values


def nonlinear_flux_solve(cx: CliqueComplex, f0, flux: FluxModel, tol: float = 1e-10,
                         max_iter: int = 50) -> Cochain:
    """Newton solve of ``div_adj(grad0 u + N(grad0 u)) = f0`` with ``u[0] = 0``."""
    f = _values(f0, cx, 0)
    if cx.graph.num_components() != 1:
        raise ValueError("graph must be connected")
    scale = max(1.0, float(np.max(np.abs(f))) if len(f) else 1.0)
    if abs(float(np.sum(f))) > 1e-12 * scale * len(f):
        raise ValueError(f"compatibility violated: sum(f0) = {np.sum(f):.3e} must vanish")
    b = cx.incidence0()
    div = -(b.T * cx.graph.edge_weights())  # div_adj as a matrix
    u = np.zeros(cx.graph.n)

    def residual(u):
        r = flux_operator(cx, u, flux) - f
        r[0] = u[0]
        return r

    r = residual(u)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol * scale:
            return Cochain(cx, 0, u)
        g = b @ u
        _, slope = _flux_and_slope(flux, g)
        jac = div @ ((1.0 + slope)[:, None] * b)
        jac[0, :] = 0.0
        jac[0, 0] = 1.0
        step = np.linalg.solve(jac, -r)
        t, rn = 1.0, np.max(np.abs(r))
        for _ in range(30):
            cand = residual(u + t * step)
            if np.max(np.abs(cand)) < rn:
                break
            t *= 0.5
        u = u + t * step
        r = cand
    if np.max(np.abs(r)) <= tol * scale:
        return Cochain(cx, 0, u)
    raise RuntimeError(f"Newton did not converge in {max_iter} iterations (residual {np.max(np.abs(r)):.3e})")


def flux_model_loss(cx: CliqueComplex, pairs, flux: FluxModel) -> Tensor:
    """``sum over pairs of ||div_adj(grad u + N(grad u)) - f0||^2`` as a tensor."""
    b = cx.incidence0()
    div = -(b.T * cx.graph.edge_weights())
    total = None
    for u, f in pairs:
        g = (b @ _values(u, cx, 0)).reshape(-1, 1)
        out = flux(g) if flux.parameters() else Tensor(np.zeros_like(g))
        if not isinstance(out, Tensor):
            out = Tensor(np.asarray(out))
        pred = Tensor(div) @ (out + g)
        err = pred - _values(f, cx, 0).reshape(-1, 1)
        term = (err * err).sum()
        total = term if total is None else total + term
    return total


def fit_flux_model(cx: CliqueComplex, pairs, flux: FluxModel, epochs: int = 2000, lr: float = 1e-2,
                   lr_final: float | None = None):
    """Adam on the flux parameters; returns the loss history.

    With ``lr_final`` the rate decays geometrically from ``lr`` to it.
    """
    if not pairs:
        raise ValueError("need at least one (u0, f0) pair")
    params = flux.parameters()
    state = AdamState(lr=lr)
    hist = []
    ratio = 1.0 if lr_final is None else (lr_final / lr) ** (1.0 / max(1, epochs - 1))
    for k in range(epochs):
        loss = flux_model_loss(cx, pairs, flux)
        hist.append(loss.item())
        if not params:
            break
        adam_step(params, grad_params(loss, params), state, lr=lr * ratio ** k)
    hist.append(flux_model_loss(cx, pairs, flux).item())
    return hist


def flux_residual(cx: CliqueComplex, pairs, flux: FluxModel) -> float:
    """Root-mean-square operator mismatch over all pairs and nodes."""
    loss = flux_model_loss(cx, pairs, flux).item()
    return float(np.sqrt(loss / (len(pairs) * cx.graph.n)))


# stencils ---------------------------------------------------------------------------

@dataclass
class Stencil:
    """Per-target-node neighbourhoods (self included) and coefficients."""

    nodes: np.ndarray
    neighbors: list
    coeffs: list

    def shared(self) -> bool:
        return len({len(n) for n in self.neighbors}) == 1 and all(
            np.array_equal(c, self.coeffs[0]) for c in self.coeffs)


def chain_neighborhoods(n: int) -> tuple[np.ndarray, list]:
    """Interior nodes of a path ``0..n-1`` with neighbourhood ``(i-1, i, i+1)``."""
    nodes = np.arange(1, n - 1)
    return nodes, [(i - 1, i, i + 1) for i in nodes]


def stencil_apply(stencil: Stencil, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    out = np.empty(len(stencil.nodes))
    for r, (nb, c) in enumerate(zip(stencil.neighbors, stencil.coeffs)):
        c = np.asarray(c, dtype=np.float64)
        if len(c) != len(nb):
            raise ValueError(f"node {stencil.nodes[r]}: {len(c)} coefficients for {len(nb)} neighbours")
        out[r] = float(c @ x[list(nb)])
    return out


def fit_stencil(samples, nodes, neighbors, shared: bool = False) -> Stencil:
    """Least-squares stencil coefficients from ``(x, Lx)`` samples (``Lx`` at ``nodes``)."""
    if not samples:
        raise ValueError("no samples")
    xs = [np.asarray(x, dtype=np.float64).reshape(-1) for x, _ in samples]
    ys = [np.asarray(y, dtype=np.float64).reshape(-1) for _, y in samples]

    def solve(a, b, where):
        rank = np.linalg.matrix_rank(a)
        if rank < a.shape[1]:
            raise ValueError(f"rank-deficient stencil system at {where} (rank {rank} < {a.shape[1]})")
        return np.linalg.lstsq(a, b, rcond=None)[0]

    if shared:
        widths = {len(n) for n in neighbors}
        if len(widths) != 1:
            raise ValueError("shared stencil needs equal neighbourhood sizes")
        a = np.array([x[list(nb)] for x in xs for nb in neighbors])
        b = np.array([y[r] for y in ys for r in range(len(nodes))])
        c = solve(a, b, "shared stencil")
        return Stencil(np.asarray(nodes), list(neighbors), [c.copy() for _ in nodes])
    coeffs = []
    for r, nb in enumerate(neighbors):
        a = np.array([x[list(nb)] for x in xs])
        b = np.array([y[r] for y in ys])
        coeffs.append(solve(a, b, f"node {nodes[r]}"))
    return Stencil(np.asarray(nodes), list(neighbors), coeffs)


# GMLS -------------------------------------------------------------------------------

def monomial_exponents(dim: int, order: int) -> list[tuple]:
    """Graded order: all multi-indices of total degree 0, then 1, ..."""
    out = []
    for d in range(order + 1):
        for e in itertools.product(range(d + 1), repeat=dim):
            if sum(e) == d:
                out.append(e)
    out.sort(key=lambda e: (sum(e), tuple(-v for v in e)))
    return out


def quartic_kernel(r, eps: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    return np.where(r < eps, (1.0 - r / eps) ** 4, 0.0)


def gmls_lift(centers, points, values, order: int, eps: float) -> np.ndarray:
    """Weighted least-squares polynomial coefficients in ``(x - x_c)`` per center.

    Returns ``(n_centers, n_basis)`` in :func:`monomial_exponents` order.
    """
    if eps <= 0:
        raise ValueError("kernel radius must be positive")
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    ctr = np.asarray(centers, dtype=np.float64).reshape(-1, pts.shape[1])
    u = np.asarray(values, dtype=np.float64).reshape(-1)
    exps = np.array(monomial_exponents(pts.shape[1], order))
    out = np.empty((len(ctr), len(exps)))
    for c, xc in enumerate(ctr):
        w = quartic_kernel(np.linalg.norm(pts - xc, axis=1), eps)
        sel = w > 0
        if sel.sum() < len(exps):
            raise ValueError(f"center {c}: {int(sel.sum())} neighbours inside eps, need {len(exps)}")
        d = pts[sel] - xc
        p = np.prod(d[:, None, :] ** exps[None, :, :], axis=2)
        sw = np.sqrt(w[sel])
        a = p * sw[:, None]
        if np.linalg.matrix_rank(a) < len(exps):
            raise ValueError(f"center {c}: neighbours do not determine the polynomial basis")
        out[c] = np.linalg.lstsq(a, u[sel] * sw, rcond=None)[0]
    return out


# file formats -----------------------------------------------------------------------

def read_edge_list(path, n: int | None = None) -> OrientedGraph:
    """``i j [weight]`` per line, 0-based; ``#`` starts a comment."""
    edges, weights = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise ValueError(f"{path}:{lineno}: expected 'i j [weight]'")
        edges.append((int(parts[0]), int(parts[1])))
        weights.append(float(parts[2]) if len(parts) == 3 else None)
    has_w = [w is not None for w in weights]
    if any(has_w) and not all(has_w):
        raise ValueError(f"{path}: either every edge has a weight or none does")
    if n is None:
        n = 1 + max((max(e) for e in edges), default=-1)
    return OrientedGraph.from_edges(n, edges, weights if all(has_w) and weights else None)


def write_edge_list(graph: OrientedGraph, path) -> None:
    lines = []
    for k, (i, j) in enumerate(graph.edges):
        lines.append(f"{i} {j}" if graph.weights is None else f"{i} {j} {float(graph.weights[k])!r}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def random_graph(n: int, p: float, rng: np.random.Generator, connected: bool = False) -> OrientedGraph:
    """Erdos-Renyi graph; ``connected`` adds a random spanning path first."""
    edges = set()
    if connected and n > 1:
        order = rng.permutation(n)
        edges.update((min(a, b), max(a, b)) for a, b in zip(order[:-1], order[1:]))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                edges.add((i, j))
    return OrientedGraph.from_edges(n, sorted(edges))
