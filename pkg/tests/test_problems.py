import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from piml.problems import REGISTRY, Box, get_problem, l2_relative_error, sample_collocation


def test_registry_contents():
    assert set(REGISTRY) == {"bl_ode", "diffusion_reaction", "poisson1d", "heat_conduction"}
    with pytest.raises(KeyError):
        get_problem("navier_stokes")


@pytest.mark.parametrize("name,params", [("bl_ode", {}), ("bl_ode", {"nu": 1e-2}), ("diffusion_reaction", {}),
                                         ("poisson1d", {}), ("poisson1d", {"k": 3.0}), ("heat_conduction", {})])
def test_plug_back(name, params):
    spec = get_problem(name, **params)
    pts = spec.domain.sample(np.random.default_rng(1), 1000, "uniform-random")
    r = spec.residual_of_exact(pts)
    assert np.mean(np.abs(r)) <= 1e-8
    for d in (spec.max_deriv_order,):
        assert d <= 3


def test_bl_ode_boundary_values_and_residual():
    spec = get_problem("bl_ode", nu=1e-2)
    assert spec.exact_values("u", [[1.0]])[0, 0] == pytest.approx(0.0, abs=1e-12)
    assert spec.exact_values("u", [[-1.0]])[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert abs(spec.residual_of_exact([[0.3]])[0]) <= 1e-10
    # default viscosity keeps the exponentials finite
    d = get_problem("bl_ode")
    assert d.params["nu"] == 1e-3
    assert d.exact_values("u", [[1.0]])[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_bl_ode_closed_form_matches_textbook_form():
    nu = 1e-2
    spec = get_problem("bl_ode", nu=nu)
    s = math.sqrt(nu)
    # u = A e^{x/s} + B e^{-x/s} + e^x/(nu-1), solve for A, B directly
    m = np.array([[math.exp(-1 / s), math.exp(1 / s)], [math.exp(1 / s), math.exp(-1 / s)]])
    rhs = np.array([1 - math.exp(-1) / (nu - 1), -math.e / (nu - 1)])
    a, b = np.linalg.solve(m, rhs)
    x = np.linspace(-1, 1, 9)
    want = a * np.exp(x / s) + b * np.exp(-x / s) + np.exp(x) / (nu - 1)
    assert np.allclose(spec.exact_values("u", x[:, None]).ravel(), want, rtol=1e-10, atol=1e-10)


def test_bl_ode_rejects_nonpositive_nu():
    for nu in (0.0, -1.0):
        with pytest.raises(ValueError):
            get_problem("bl_ode", nu=nu)


def test_diffusion_reaction_values():
    spec = get_problem("diffusion_reaction")
    assert spec.exact_values("u", [[0.0, 0.0]])[0, 0] == 0.0
    assert spec.exact_values("u", [[math.pi / 2, 0.0]])[0, 0] == pytest.approx(2 / 3, abs=1e-14)
    t = np.linspace(0, 1, 11)
    for side in (-math.pi, math.pi):
        pts = np.stack([np.full_like(t, side), t], axis=1)
        assert np.max(np.abs(spec.exact_values("u", pts))) <= 1e-13


def test_diffusion_reaction_forcing_hand_derived():
    # u_t - u_xx = e^{-t} sum (i - 1/i) sin(i x) over the series terms
    spec = get_problem("diffusion_reaction")
    rng = np.random.default_rng(0)
    pts = spec.domain.sample(rng, 50, "uniform-random")
    x, t = pts[:, 0], pts[:, 1]
    want = np.exp(-t) * (1.5 * np.sin(2 * x) + 8 / 3 * np.sin(3 * x) + 15 / 4 * np.sin(4 * x) + 63 / 8 * np.sin(8 * x))
    ctx = spec.exact_context(pts)
    ctx.fields["u"] = ctx["u"] * 0.0
    # with u = 0 the residual reduces to -R
    assert np.allclose(-spec.residual(ctx).value.data.ravel(), want, rtol=0, atol=1e-12)


def test_poisson_forcing_and_gradient_identity():
    spec = get_problem("poisson1d")
    f = spec.params["forcing"]([np.array([[math.pi / 2]])])
    assert np.asarray(f).item() == pytest.approx(-1.0, abs=1e-15)
    pts = np.linspace(-math.pi, math.pi, 25)[:, None]
    assert np.max(np.abs(spec.residual_of_exact(pts))) <= 1e-12
    ctx = spec.exact_context(pts, grad_axes=(0,))
    # d/dx of the residual: u''' - f'
    g = spec.residual(ctx).d((0,)).value.data
    assert np.max(np.abs(g)) <= 1e-12


def test_heat_conduction_values_and_hand_forcing():
    spec = get_problem("heat_conduction")
    assert spec.exact_values("T", [[0.0, 0.0]])[0, 0] == pytest.approx(20.0)
    assert spec.exact_values("K", [[math.pi, 0.0]])[0, 0] == pytest.approx(21.0, abs=1e-13)
    pts = spec.domain.sample(np.random.default_rng(3), 100, "uniform-random")
    # T_x = 0 and K T_y = -40 e^{-0.1y} - 2 sin(x/2), so the divergence is 4 e^{-0.1y}
    f = spec.params["forcing"](pts).ravel()
    assert np.allclose(f, 4 * np.exp(-0.1 * pts[:, 1]), rtol=0, atol=1e-9)
    assert spec.primary_field == "K"
    assert spec.data_fields == ("T",)


def test_heat_conduction_configurable_rectangle():
    spec = get_problem("heat_conduction", domain=((0.0, 0.0), (3.0, 1.0)))
    assert spec.domain == Box((0.0, 0.0), (3.0, 1.0))


def test_l2_relative_error_examples():
    e = np.array([1.0, -2.0, 3.0])
    assert l2_relative_error(e, e) == 0.0
    assert l2_relative_error(np.zeros(3), e) == 1.0
    assert l2_relative_error(1.1 * e, e) == pytest.approx(0.1, rel=1e-12)
    with pytest.raises(ValueError):
        l2_relative_error(e, np.zeros(3))
    with pytest.raises(ValueError):
        l2_relative_error(e[:2], e)


def test_collocation_empty_counts():
    spec = get_problem("diffusion_reaction")
    c = sample_collocation(spec, {"interior": 0, "boundary": 0, "data": 0})
    assert c.counts() == {"interior": 0, "boundary": 0, "data": 0}
    assert c.boundary_points().shape == (0, 2)


def test_collocation_containment_and_determinism():
    spec = get_problem("bl_ode")
    a = sample_collocation(spec, {"interior": 1000, "boundary": 1}, seed=7)
    b = sample_collocation(spec, {"interior": 1000, "boundary": 1}, seed=7)
    assert np.all(spec.domain.contains(a.interior))
    assert np.array_equal(a.interior, b.interior)
    assert np.array_equal(a.boundary_points(), b.boundary_points())
    c = sample_collocation(spec, {"interior": 1000, "boundary": 1}, seed=8)
    assert not np.array_equal(a.interior, c.interior)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 30),
       strategy=st.sampled_from(["uniform-random", "equispaced", "halton"]))
def test_boundary_points_on_their_face(seed, n, strategy):
    spec = get_problem("heat_conduction")
    col = sample_collocation(spec, {"interior": n, "boundary": n}, strategy, seed)
    assert np.all(spec.domain.contains(col.interior))
    for idx, pts in col.boundary:
        bc = spec.boundary[idx]
        assert np.max(bc.distance(spec.domain, pts)) <= 1e-12
        assert np.all(spec.domain.contains(pts, 1e-12))


def test_equispaced_strategy_and_unknown_strategy():
    spec = get_problem("poisson1d")
    c = sample_collocation(spec, {"interior": 4}, "equispaced")
    assert np.allclose(c.interior.ravel(), -math.pi + (np.arange(4) + 0.5) * 2 * math.pi / 4)
    with pytest.raises(ValueError):
        sample_collocation(spec, {"interior": 4}, "sobol")


def test_halton_strategy_covers_the_box():
    spec = get_problem("diffusion_reaction")
    a = sample_collocation(spec, {"interior": 40, "boundary": 0}, "halton", 3)
    b = sample_collocation(spec, {"interior": 40, "boundary": 0}, "halton", 3)
    assert np.array_equal(a.interior, b.interior)
    assert np.all(spec.domain.contains(a.interior))
    # low discrepancy: every cell of a 4 x 2 partition of the box receives points
    lo, hi = np.array(spec.domain.lo), np.array(spec.domain.hi)
    cells = np.floor((a.interior - lo) / (hi - lo) * [4, 2]).astype(int)
    assert len({tuple(c) for c in cells}) == 8


def test_negative_count_and_degenerate_domain():
    spec = get_problem("poisson1d")
    with pytest.raises(ValueError):
        sample_collocation(spec, {"interior": -1})
    flat = get_problem("poisson1d", domain=(1.0, 1.0))
    with pytest.raises(ValueError):
        sample_collocation(flat, {"interior": 5})


def test_data_targets_follow_exact_field():
    spec = get_problem("heat_conduction")
    c = sample_collocation(spec, {"interior": 5, "boundary": 2, "data": 10}, seed=2)
    assert np.array_equal(c.data_targets["T"], spec.exact_values("T", c.data))


def test_gradient_point_sets_per_axis():
    spec = get_problem("diffusion_reaction")
    c = sample_collocation(spec, {"interior": 5, "grad": 7}, seed=0)
    assert set(c.grad) == {0, 1}
    assert all(p.shape == (7, 2) for p in c.grad.values())
    assert sample_collocation(spec, {"interior": 5}).grad is None
