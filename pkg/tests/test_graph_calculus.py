import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from piml.graph import (
    Cochain, OrientedGraph, Stencil, build_complex, chain_neighborhoods, curl1, curl_adj, diffusion_step,
    div_adj, fit_diffusion, fit_flux_model, fit_stencil, flux_model_loss, flux_operator, flux_residual,
    gmls_lift, grad0, graph_laplacian_matrix, hodge_laplacian1, laplacian0, mlp_flux, monomial_exponents,
    nonlinear_flux_solve, polynomial_flux, quartic_kernel, random_graph, read_edge_list, stencil_apply,
    write_edge_list, zero_flux,
)


def path(n):
    return build_complex(OrientedGraph.from_edges(n, [(i, i + 1) for i in range(n - 1)]))


def complete(n):
    return build_complex(OrientedGraph.from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)]))


def random_complex(seed, n_max=30, connected=False):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, n_max + 1))
    return build_complex(random_graph(n, float(rng.uniform(0.1, 0.6)), rng, connected)), rng


def brute_incidence(cx):
    """Signed node-edge incidence written out independently of the package."""
    b = np.zeros((len(cx.edges), cx.graph.n))
    for e, (i, j) in enumerate(cx.edges):
        b[e, i], b[e, j] = -1.0, 1.0
    return b


def brute_curl(cx):
    index = {tuple(e): k for k, e in enumerate(cx.edges.tolist())}
    c = np.zeros((len(cx.triangles), len(cx.edges)))
    for t, (i, j, k) in enumerate(cx.triangles.tolist()):
        # psi_ij + psi_jk + psi_ki with psi_ki = -psi_ik
        c[t, index[(i, j)]] += 1
        c[t, index[(j, k)]] += 1
        c[t, index[(i, k)]] -= 1
    return c


def operator_matrix(fn, size):
    return np.column_stack([np.asarray(fn(np.eye(size)[k]).values) for k in range(size)]) if size else np.zeros((0, 0))


# graphs and complexes -------------------------------------------------------------

def test_graph_validation():
    g = OrientedGraph.from_edges(3, [(2, 0), (1, 2)])
    assert g.edges.tolist() == [[0, 2], [1, 2]]
    for bad in ([(0, 0)], [(0, 1), (1, 0)], [(0, 5)]):
        with pytest.raises(ValueError):
            OrientedGraph.from_edges(3, bad)
    with pytest.raises(ValueError):
        OrientedGraph.from_edges(3, [(0, 1)], weights=[0.0])


def test_triangle_counts():
    assert len(complete(3).triangles) == 1
    assert complete(4).triangles.tolist() == [[0, 1, 2], [0, 1, 3], [0, 2, 3], [1, 2, 3]]
    tree = build_complex(OrientedGraph.from_edges(6, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]))
    assert len(tree.triangles) == 0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_triangles_match_brute_force(seed):
    cx, _ = random_complex(seed, 15)
    a = cx.graph.adjacency() != 0
    n = cx.graph.n
    want = [[i, j, k] for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n) if a[i, j] and a[j, k] and a[i, k]]
    assert cx.triangles.tolist() == want


# grad / curl / div ----------------------------------------------------------------

def test_grad0_examples():
    cx = path(3)
    g = grad0(cx, [0.0, 1.0, 3.0])
    assert np.asarray(g).tolist() == [1.0, 2.0]
    assert g[(1, 0)] == -1.0 and g[(2, 1)] == -2.0
    assert np.all(np.asarray(grad0(cx, [4.0, 4.0, 4.0])) == 0)
    with pytest.raises(ValueError):
        grad0(cx, [1.0, 2.0])


def test_curl1_examples():
    cx = complete(3)
    # psi_01 = psi_12 = psi_20 = 1, stored canonically as (0,1), (0,2), (1,2)
    psi = Cochain(cx, 1, [1.0, -1.0, 1.0])
    assert psi[(2, 0)] == 1.0
    c = curl1(cx, psi)
    assert c[(0, 1, 2)] == 3.0
    assert c[(1, 0, 2)] == -3.0 and c[(1, 2, 0)] == 3.0
    assert np.all(np.asarray(curl1(cx, grad0(cx, [0.3, -2.0, 5.0]))) == 0)
    with pytest.raises(ValueError):
        curl1(cx, [1.0, 2.0])


def test_div_adj_examples():
    cx = path(3)
    d = div_adj(cx, [1.0, 2.0])
    assert d[1] == 1.0
    assert np.asarray(d).tolist() == [1.0, 1.0, -2.0]
    assert np.all(np.asarray(div_adj(cx, [0.0, 0.0])) == 0)


def test_exactness_integers_exact():
    for seed in range(20):
        cx, rng = random_complex(seed)
        phi = rng.integers(-50, 50, cx.graph.n).astype(float)
        psi = rng.integers(-50, 50, len(cx.edges)).astype(float)
        assert np.all(np.asarray(curl1(cx, grad0(cx, phi))) == 0.0)
        assert float(np.sum(np.asarray(div_adj(cx, psi)))) == 0.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_exactness_and_adjoint_floats(seed):
    cx, rng = random_complex(seed)
    phi = rng.normal(size=cx.graph.n)
    psi = rng.normal(size=len(cx.edges))
    assert np.max(np.abs(np.asarray(curl1(cx, grad0(cx, phi)))), initial=0.0) <= 1e-13
    assert abs(np.sum(np.asarray(div_adj(cx, psi)))) <= 1e-13
    lhs = float(np.asarray(grad0(cx, phi)) @ psi)
    rhs = float(phi @ np.asarray(div_adj(cx, psi)))
    assert abs(lhs + rhs) <= 1e-12
    b = brute_incidence(cx)
    assert np.array_equal(np.asarray(grad0(cx, phi)), b @ phi)
    assert np.allclose(np.asarray(curl1(cx, psi)), brute_curl(cx) @ psi, rtol=0, atol=1e-14)


def test_weighted_divergence():
    g = OrientedGraph.from_edges(3, [(0, 1), (1, 2)], weights=[2.0, 0.5])
    cx = build_complex(g)
    assert np.asarray(div_adj(cx, [1.0, 1.0])).tolist() == [2.0, -1.5, -0.5]


# Laplacians -----------------------------------------------------------------------

def test_path_laplacian_matrix():
    lap = graph_laplacian_matrix(path(3).graph)
    assert lap.tolist() == [[1, -1, 0], [-1, 2, -1], [0, -1, 1]]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_laplacian0_is_negative_matrix_laplacian(seed):
    cx, rng = random_complex(seed)
    n = cx.graph.n
    lap = np.zeros((n, n))
    for i, j in cx.edges.tolist():
        lap[i, i] += 1
        lap[j, j] += 1
        lap[i, j] -= 1
        lap[j, i] -= 1
    phi = rng.normal(size=n)
    assert np.max(np.abs(np.asarray(laplacian0(cx, phi)) + lap @ phi)) <= 1e-14 * max(1, np.max(np.abs(phi))) * n
    assert np.max(np.abs(np.asarray(laplacian0(cx, np.full(n, 2.5))))) == 0.0


def test_laplacian0_nullity_on_connected_graphs():
    for seed in range(10):
        cx, _ = random_complex(seed, 20, connected=True)
        w = np.linalg.eigvalsh(operator_matrix(lambda v: laplacian0(cx, v), cx.graph.n))
        assert int(np.sum(np.abs(w) < 1e-9)) == 1


def hodge_nullity(cx):
    m = operator_matrix(lambda v: hodge_laplacian1(cx, v), len(cx.edges))
    return int(np.sum(np.abs(np.linalg.eigvalsh(m)) < 1e-9)) if m.size else 0


def test_hodge_examples():
    cycle = build_complex(OrientedGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)]))
    assert hodge_nullity(cycle) == 1
    assert hodge_nullity(complete(3)) == 0
    cx = complete(3)
    phi = np.array([0.2, -1.0, 3.0])
    lhs = np.asarray(hodge_laplacian1(cx, grad0(cx, phi)))
    rhs = np.asarray(grad0(cx, laplacian0(cx, phi)))
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_hodge_nullity_is_first_betti_number(seed):
    cx, _ = random_complex(seed, 14)
    b0, b1 = brute_incidence(cx), brute_curl(cx)
    r0 = np.linalg.matrix_rank(b0) if b0.size else 0
    r1 = np.linalg.matrix_rank(b1) if b1.size else 0
    assert hodge_nullity(cx) == len(cx.edges) - r0 - r1
    m = operator_matrix(lambda v: hodge_laplacian1(cx, v), len(cx.edges))
    if m.size:
        assert np.allclose(m, -(b0 @ b0.T + b1.T @ b1), rtol=0, atol=1e-13)
    chi = np.random.default_rng(seed).normal(size=len(cx.triangles))
    psi = np.random.default_rng(seed + 1).normal(size=len(cx.edges))
    # curl_adj follows the same sign convention as div_adj
    assert abs(float(np.asarray(curl1(cx, psi)) @ chi) + float(psi @ np.asarray(curl_adj(cx, chi)))) <= 1e-12


# diffusion ------------------------------------------------------------------------

def test_diffusion_step_examples():
    cx = path(2)
    assert np.asarray(diffusion_step(cx, [1.0, 0.0], 0.25)).tolist() == [0.75, 0.25]
    x = [0.3, -1.0]
    assert np.asarray(diffusion_step(cx, x, 0.0)).tolist() == x
    with pytest.raises(ValueError):
        diffusion_step(cx, x, -0.1)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), frac=st.floats(0.01, 0.99))
def test_diffusion_conserves_mass_and_dissipates(seed, frac):
    cx, rng = random_complex(seed, 20)
    x = rng.normal(size=cx.graph.n)
    lmax = max(float(np.max(np.linalg.eigvalsh(graph_laplacian_matrix(cx.graph)))), 1e-12)
    y = np.asarray(diffusion_step(cx, x, frac / lmax))
    assert abs(y.sum() - x.sum()) <= 1e-12 * max(1, np.abs(x).sum())
    e = lambda v: float(np.sum(np.asarray(grad0(cx, v)) ** 2))
    assert e(y) <= e(x) + 1e-12


def trajectory(cx, x0, alpha, steps):
    xs = [np.asarray(x0, dtype=float)]
    for _ in range(steps):
        xs.append(np.asarray(diffusion_step(cx, xs[-1], alpha)))
    return xs


def test_fit_diffusion_examples():
    cx, rng = random_complex(5, 20, connected=True)
    x0 = rng.normal(size=cx.graph.n)
    assert abs(fit_diffusion(cx, trajectory(cx, x0, 0.1, 10)) - 0.1) <= 1e-10
    assert abs(fit_diffusion(cx, trajectory(cx, x0, 0.3, 1)) - 0.3) <= 1e-12
    with pytest.raises(ValueError):
        fit_diffusion(cx, [np.ones(cx.graph.n)] * 4)
    with pytest.raises(ValueError):
        fit_diffusion(cx, [x0])


# nonlinear flux -------------------------------------------------------------------

def test_flux_solve_linear_matches_direct_solve():
    cx, rng = random_complex(11, 15, connected=True)
    phi = rng.normal(size=cx.graph.n)
    f0 = np.asarray(laplacian0(cx, phi))
    u = np.asarray(nonlinear_flux_solve(cx, f0, zero_flux()))
    assert np.max(np.abs(u - (phi - phi[0]))) <= 1e-9
    # independent oracle: pseudo-inverse of the matrix Laplacian, gauge shifted
    v = np.linalg.pinv(graph_laplacian_matrix(cx.graph)) @ (-f0)
    assert np.max(np.abs(u - (v - v[0]))) <= 1e-9


def test_flux_solve_trivial_and_incompatible():
    cx = path(5)
    flux = polynomial_flux([0.0, 0.0, 0.5])
    assert np.all(np.asarray(nonlinear_flux_solve(cx, np.zeros(5), flux)) == 0.0)
    with pytest.raises(ValueError):
        nonlinear_flux_solve(cx, [1.0, 0, 0, 0, 0], flux)
    disconnected = build_complex(OrientedGraph.from_edges(4, [(0, 1), (2, 3)]))
    with pytest.raises(ValueError):
        nonlinear_flux_solve(disconnected, np.zeros(4), flux)


def test_flux_solve_nonlinear_roundtrip():
    cx, rng = random_complex(3, 10, connected=True)
    flux = polynomial_flux([0.0, 0.0, 0.5])
    u_true = rng.normal(size=cx.graph.n) * 0.5
    u_true -= u_true[0]
    f0 = flux_operator(cx, u_true, flux)
    u = np.asarray(nonlinear_flux_solve(cx, f0, flux))
    assert np.max(np.abs(u - u_true)) <= 1e-8
    assert np.max(np.abs(flux_operator(cx, u, flux) - f0)) <= 1e-10


def test_flux_model_conservation_and_zero_member():
    cx, rng = random_complex(8, 10, connected=True)
    for seed in range(3):
        model = mlp_flux((6,), seed=seed)
        u = rng.normal(size=cx.graph.n)
        assert abs(flux_operator(cx, u, model).sum()) <= 1e-12
    model = mlp_flux((6,), seed=0)
    model.net.weights[-1].data[:] = 0.0
    pairs = []
    for _ in range(3):
        u = rng.normal(size=cx.graph.n)
        pairs.append((u, np.asarray(laplacian0(cx, u))))
    assert flux_model_loss(cx, pairs, model).item() <= 1e-12
    assert flux_residual(cx, pairs, zero_flux()) <= 1e-12


def test_fit_polynomial_flux_recovers_cubic():
    cx, rng = random_complex(2, 10, connected=True)
    true = polynomial_flux([0.0, 0.0, 0.5])
    pairs = []
    for _ in range(4):
        u = rng.normal(size=cx.graph.n)
        pairs.append((u, flux_operator(cx, u, true)))
    model = polynomial_flux([0.0, 0.0, 0.0])
    hist = fit_flux_model(cx, pairs, model, epochs=2000, lr=5e-2)
    assert hist[-1] < hist[0]
    assert flux_residual(cx, pairs, model) <= 1e-8
    assert np.allclose(model.coeffs.data[0], [0, 0, 0.5], rtol=0, atol=1e-8)
    with pytest.raises(ValueError):
        fit_flux_model(cx, [], model)


# stencils -------------------------------------------------------------------------

def test_stencil_apply_examples():
    h = 0.5
    x = np.arange(7) * h
    nodes, nb = chain_neighborhoods(7)
    st_ = Stencil(nodes, nb, [np.array([1.0, -2.0, 1.0]) / h ** 2 for _ in nodes])
    assert np.allclose(stencil_apply(st_, x ** 2), 2.0, rtol=0, atol=1e-12)
    zero = Stencil(nodes, nb, [np.zeros(3) for _ in nodes])
    assert np.all(stencil_apply(zero, x ** 2) == 0.0)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=7), rng.normal(size=7)
    assert np.allclose(stencil_apply(st_, 2 * a - 3 * b), 2 * stencil_apply(st_, a) - 3 * stencil_apply(st_, b))
    with pytest.raises(ValueError):
        stencil_apply(Stencil(nodes, nb, [np.zeros(2) for _ in nodes]), x)


def poly_samples(n, h):
    x = np.arange(n) * h
    nodes, _ = chain_neighborhoods(n)
    polys = [(x ** 2, 2 + 0 * x), (x ** 3 - x, 6 * x), (np.ones(n), 0 * x), (x, 0 * x)]
    return [(u, lu[nodes]) for u, lu in polys]


@pytest.mark.parametrize("shared", [False, True])
def test_fit_stencil_recovers_central_difference(shared):
    h = 0.1
    nodes, nb = chain_neighborhoods(8)
    s = fit_stencil(poly_samples(8, h), nodes, nb, shared=shared)
    for c in s.coeffs:
        assert np.max(np.abs(np.asarray(c) - np.array([1, -2, 1]) / h ** 2)) <= 1e-8


def test_fit_stencil_modes_agree_and_zero_targets():
    h = 0.2
    nodes, nb = chain_neighborhoods(6)
    samples = poly_samples(6, h)
    a = fit_stencil(samples, nodes, nb)
    b = fit_stencil(samples, nodes, nb, shared=True)
    assert b.shared()
    for ca, cb in zip(a.coeffs, b.coeffs):
        assert np.allclose(ca, cb, rtol=0, atol=1e-8)
    z = fit_stencil([(u, 0 * t) for u, t in samples], nodes, nb)
    assert all(np.max(np.abs(c)) <= 1e-12 for c in z.coeffs)
    with pytest.raises(ValueError):
        fit_stencil(samples[:1], nodes, nb)


# GMLS -----------------------------------------------------------------------------

def test_gmls_examples():
    pts = np.array([0.0, 1.0, 2.0])
    c = gmls_lift([1.0], pts, 2 * pts + 1, order=1, eps=1.5)
    assert np.allclose(c[0], [3.0, 2.0], rtol=0, atol=1e-12)
    k = gmls_lift([0.5, 1.5], pts, np.full(3, 4.0), order=1, eps=2.5)
    assert np.allclose(k, [[4.0, 0.0], [4.0, 0.0]], atol=1e-12)
    assert quartic_kernel(1.5, 1.5) == 0.0 and quartic_kernel(0.0, 1.5) == 1.0
    with pytest.raises(ValueError):
        gmls_lift([1.0], pts, pts, order=1, eps=0.9)


def test_gmls_boundary_neighbour_has_no_weight():
    pts = np.array([0.0, 0.5, 1.0, 1.5, 3.0])
    vals = np.array([0.0, 0.5, 1.0, 1.5, 100.0])  # the outlier sits exactly at distance eps
    c = gmls_lift([1.0], pts, vals, order=1, eps=2.0)
    assert np.allclose(c[0], [1.0, 1.0], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 1000), order=st.integers(0, 3))
def test_gmls_reproduces_polynomials_2d(seed, order):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (60, 2))
    exps = monomial_exponents(2, order)
    center = rng.uniform(-0.3, 0.3, 2)
    truth = rng.normal(size=len(exps))
    d = pts - center
    vals = sum(t * d[:, 0] ** e[0] * d[:, 1] ** e[1] for t, e in zip(truth, exps))
    c = gmls_lift([center], pts, vals, order, eps=1.2)
    assert np.max(np.abs(c[0] - truth)) <= 1e-10


def test_monomial_order():
    assert monomial_exponents(2, 2) == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
    assert monomial_exponents(1, 3) == [(0,), (1,), (2,), (3,)]


# files ----------------------------------------------------------------------------

def test_edge_list_round_trip(tmp_path):
    g = OrientedGraph.from_edges(5, [(3, 1), (0, 4), (1, 2)], weights=[2.0, 0.5, 1.25])
    p = tmp_path / "g.edges"
    write_edge_list(g, p)
    back = read_edge_list(p, 5)
    assert np.array_equal(back.edges, g.edges) and np.array_equal(back.weights, g.weights)
    (tmp_path / "c.edges").write_text("# comment\n0 1\n\n1 2  # trailing\n")
    assert read_edge_list(tmp_path / "c.edges").edges.tolist() == [[0, 1], [1, 2]]
    (tmp_path / "bad.edges").write_text("0 1 2 3\n")
    with pytest.raises(ValueError):
        read_edge_list(tmp_path / "bad.edges")


def test_cochain_json_round_trip():
    cx = complete(4)
    c = Cochain(cx, 1, np.arange(6.0))
    text = c.to_json()
    assert json.loads(text)["entries"][0] == [[0, 1], 0.0]
    back = Cochain.from_json(cx, text)
    assert np.array_equal(np.asarray(back), np.asarray(c))
    flipped = json.dumps({"degree": 1, "entries": [[[j, i], -v] for (i, j), v in
                                                   [(tuple(e), float(x)) for e, x in zip(cx.edges.tolist(), range(6))]]})
    assert np.array_equal(np.asarray(Cochain.from_json(cx, flipped)), np.arange(6.0))
    with pytest.raises(ValueError):
        Cochain.from_json(cx, json.dumps({"degree": 1, "entries": [[[0, 1], 1.0]]}))
    with pytest.raises(KeyError):
        c[(0, 0)]
