"""Benchmark PDE problems with closed-form solutions, and collocation sampling.

Residuals, boundary operators and exact solutions are written against a
``FieldContext`` using the generic functions from :mod:`piml.autodiff.jet`, so
the same closed form evaluates on plain arrays (for metrics and targets) and
on jets (for plug-back checks and for forcings whose input derivatives a
gradient-enhanced loss needs).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.stats import qmc

from .autodiff import Jet, closure, full_keys, merge
from .autodiff.jet import exp, sin


# geometry -----------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        if len(self.lo) != len(self.hi):
            raise ValueError("box bounds have different dimensions")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod([h - l for l, h in zip(self.lo, self.hi)]))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(points)
        lo = np.array(self.lo) - tol
        hi = np.array(self.hi) + tol
        return np.all((p >= lo) & (p <= hi), axis=1)

    def sample(self, rng: np.random.Generator, n: int, strategy: str) -> np.ndarray:
        if n == 0:
            return np.zeros((0, self.dim))
        if self.volume <= 0.0:
            raise ValueError(f"degenerate domain {self} has zero measure")
        lo, hi = np.array(self.lo), np.array(self.hi)
        if strategy == "uniform-random":
            return lo + (hi - lo) * rng.random((n, self.dim))
        if strategy == "equispaced":
            m = int(math.ceil(n ** (1.0 / self.dim) - 1e-9))
            axes = [l + (np.arange(m) + 0.5) * (h - l) / m for l, h in zip(lo, hi)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
            return grid[:n].copy()
        if strategy == "halton":
            # scrambled low-discrepancy points: even coverage without grid truncation
            seq = qmc.Halton(d=self.dim, scramble=True, seed=rng)
            return lo + (hi - lo) * seq.random(n)
        raise ValueError(f"unknown sampling strategy '{strategy}'")

    def face(self, axis: int, side: int) -> "Box":
        lo, hi = list(self.lo), list(self.hi)
        v = self.lo[axis] if side == 0 else self.hi[axis]
        lo[axis] = hi[axis] = v
        return Box(tuple(lo), tuple(hi))

    def sample_face(self, axis: int, side: int, rng, n: int, strategy: str) -> np.ndarray:
        face = self.face(axis, side)
        if n == 0:
            return np.zeros((0, self.dim))
        if self.dim == 1:
            return np.array([[face.lo[0]]])
        free = [i for i in range(self.dim) if i != axis]
        sub = Box(tuple(face.lo[i] for i in free), tuple(face.hi[i] for i in free))
        inner = sub.sample(rng, n, strategy)
        out = np.empty((len(inner), self.dim))
        out[:, axis] = face.lo[axis]
        out[:, free] = inner
        return out

    def grid(self, n_per_axis: int) -> np.ndarray:
        axes = [np.linspace(l, h, n_per_axis) for l, h in zip(self.lo, self.hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)


# field evaluation context ----------------------------------------------------

class FieldContext:
    """Coordinates and field jets at a batch of points."""

    def __init__(self, points, keys: frozenset):
        self.points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        self.keys = frozenset(keys)
        order = max(len(k) for k in self.keys)
        ckeys = full_keys(self.points.shape[1], order)
        self.coords = [Jet.variable(self.points[:, i:i + 1], i, ckeys) for i in range(self.points.shape[1])]
        self.fields: dict[str, Jet] = {}
        self.params: dict = {}
        self._cache: dict = {}

    def x(self, i: int) -> Jet:
        return self.coords[i]

    def __getitem__(self, name: str) -> Jet:
        return self.fields[name]

    def cached(self, name: str, fn: Callable[[], Jet]) -> Jet:
        if name not in self._cache:
            self._cache[name] = fn()
        return self._cache[name]

    def __len__(self) -> int:
        return len(self.points)


# problem definitions -----------------------------------------------------------

@dataclass(frozen=True)
class BoundaryCondition:
    """Operator ``B(u, x)`` imposed on one face of the domain box."""

    name: str
    axis: int
    side: int
    operator: Callable[[FieldContext], Jet]
    kind: str = "boundary"  # "boundary" or "initial"
    derivs: Mapping[str, tuple] = field(default_factory=dict)
    fields: tuple = ()  # fields the operator reads; empty means all

    def distance(self, domain: Box, points) -> np.ndarray:
        v = domain.lo[self.axis] if self.side == 0 else domain.hi[self.axis]
        return np.abs(np.atleast_2d(points)[:, self.axis] - v)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    axes: tuple
    domain: Box
    fields: tuple
    residual: Callable[[FieldContext], Jet]
    derivs: Mapping[str, tuple]
    boundary: tuple = ()
    exact: Mapping[str, Callable] | None = None
    data_fields: tuple = ()
    metric_field: str | None = None
    flux: Callable | None = None
    params: Mapping = field(default_factory=dict)
    # field -> g(coords, raw network output); surrogate is g(x, N(x))
    transform: Mapping[str, Callable] | None = None

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def max_deriv_order(self) -> int:
        return max((len(k) for ks in self.derivs.values() for k in ks), default=0)

    @property
    def primary_field(self) -> str:
        return self.metric_field or self.fields[0]

    def field_keys(self, grad_axes: Sequence[int] = ()) -> dict:
        """Jet keys each field must carry for the residual (and its gradient)."""
        shifts = [()] + [(i,) for i in grad_axes]
        out = {}
        for f in self.fields:
            base = [()] + list(self.derivs.get(f, ()))
            out[f] = closure(merge(tuple(k), s) for k in base for s in shifts)
        return out

    def exact_values(self, field_name: str, points) -> np.ndarray:
        if not self.exact or field_name not in self.exact:
            raise ValueError(f"problem '{self.name}' has no exact solution for '{field_name}'")
        p = np.atleast_2d(points)
        cols = [p[:, i:i + 1] for i in range(p.shape[1])]
        return np.broadcast_to(np.asarray(self.exact[field_name](cols), dtype=np.float64), (len(p), 1)).copy()

    def exact_context(self, points, grad_axes: Sequence[int] = ()) -> FieldContext:
        """Context whose fields are the exact closed forms (plug-back oracle)."""
        keys = self.field_keys(grad_axes)
        ctx = FieldContext(points, frozenset().union(*keys.values()))
        ctx.params = dict(self.params)
        for f in self.fields:
            ctx.fields[f] = _as_jet(self.exact[f](ctx.coords), ctx).truncate(keys[f])
        return ctx

    def residual_of_exact(self, points) -> np.ndarray:
        ctx = self.exact_context(points)
        return self.residual(ctx).value.data.reshape(-1)


def _as_jet(v, ctx: FieldContext) -> Jet:
    if isinstance(v, Jet):
        return v
    return Jet.constant(np.broadcast_to(np.asarray(v, dtype=np.float64), (len(ctx), 1)).copy(),
                        ctx.coords[0].keys)


def dirichlet(field_name: str, target: Callable) -> Callable[[FieldContext], Jet]:
    def op(ctx: FieldContext):
        return ctx[field_name] - target(ctx.coords)

    return op


def dirichlet_bc(name: str, field_name: str, axis: int, side: int, target: Callable,
                 kind: str = "boundary") -> BoundaryCondition:
    return BoundaryCondition(name, axis, side, dirichlet(field_name, target), kind=kind,
                             fields=(field_name,))


def bl_ode_spec(nu: float = 1e-3) -> ProblemSpec:
    """Boundary-layer ODE ``nu u'' - u = e^x`` on [-1, 1], u(-1)=1, u(1)=0."""
    if nu <= 0:
        raise ValueError("viscosity nu must be positive")
    s = math.sqrt(nu)
    cp = 1.0 / (nu - 1.0)
    # u = a e^{(x-1)/s} + b e^{-(x+1)/s} + cp e^x, scaled so no term overflows
    q = math.exp(-2.0 / s)
    m = np.array([[1.0, q], [q, 1.0]])
    rhs = np.array([0.0 - cp * math.e, 1.0 - cp / math.e])
    a, b = np.linalg.solve(m, rhs)

    def exact_u(c):
        x = c[0]
        return a * exp((x - 1.0) * (1.0 / s)) + b * exp((x + 1.0) * (-1.0 / s)) + cp * exp(x)

    def residual(ctx):
        u = ctx["u"]
        return nu * u.d((0, 0)) - u - exp(ctx.x(0))

    bcs = (
        dirichlet_bc("left", "u", 0, 0, lambda c: 1.0),
        dirichlet_bc("right", "u", 0, 1, lambda c: 0.0),
    )
    return ProblemSpec(
        name="bl_ode", axes=("x",), domain=Box((-1.0,), (1.0,)), fields=("u",),
        residual=residual, derivs={"u": ((0, 0),)}, boundary=bcs,
        exact={"u": exact_u}, params={"nu": nu, "A": a, "B": b},
        flux=_gradient_flux("u"),
    )


def diffusion_reaction_spec(D: float = 1.0, hard_constraints: bool = False) -> ProblemSpec:
    """``u_t = D u_xx + R`` on [-pi, pi] x [0, 1] with a decaying sine-series solution.

    With ``hard_constraints`` the surrogate is ``t (pi^2 - x^2) N(x, t) + series(x)``,
    which meets the initial and boundary data exactly.
    """

    def series(x):
        return sin(x) + sin(2.0 * x) * 0.5 + sin(3.0 * x) * (1.0 / 3.0) + sin(4.0 * x) * 0.25 + sin(8.0 * x) * 0.125

    def exact_u(c):
        return exp(-1.0 * c[1]) * series(c[0])

    def reaction(c):
        x = c[0]
        return exp(-1.0 * c[1]) * (sin(2.0 * x) * 1.5 + sin(3.0 * x) * (8.0 / 3.0)
                                   + sin(4.0 * x) * (15.0 / 4.0) + sin(8.0 * x) * (63.0 / 8.0))

    def residual(ctx):
        u = ctx["u"]
        r = ctx.cached("reaction", lambda: reaction(ctx.coords))
        return u.d((1,)) - D * u.d((0, 0)) - r

    bcs = (
        dirichlet_bc("x_lo", "u", 0, 0, lambda c: 0.0),
        dirichlet_bc("x_hi", "u", 0, 1, lambda c: 0.0),
        dirichlet_bc("t0", "u", 1, 0, lambda c: series(c[0]), kind="initial"),
    )
    def hard(c, raw):
        x, t = c[0], c[1]
        return t * (math.pi ** 2 - x * x) * raw + series(x)

    return ProblemSpec(
        name="diffusion_reaction", axes=("x", "t"),
        domain=Box((-math.pi, 0.0), (math.pi, 1.0)), fields=("u",),
        residual=residual, derivs={"u": ((1,), (0, 0))}, boundary=bcs,
        exact={"u": exact_u}, params={"D": D, "hard_constraints": bool(hard_constraints)},
        transform={"u": hard} if hard_constraints else None,
    )


def poisson1d_spec(k: float = 1.0, domain=(-math.pi, math.pi)) -> ProblemSpec:
    """``u'' = f`` with manufactured ``u* = sin(kx)``."""

    def exact_u(c):
        return sin(k * c[0])

    def forcing(c):
        return sin(k * c[0]) * (-k * k)

    def residual(ctx):
        f = ctx.cached("forcing", lambda: forcing(ctx.coords))
        return ctx["u"].d((0, 0)) - f

    lo, hi = domain
    bcs = (
        dirichlet_bc("left", "u", 0, 0, exact_u),
        dirichlet_bc("right", "u", 0, 1, exact_u),
    )
    return ProblemSpec(
        name="poisson1d", axes=("x",), domain=Box((lo,), (hi,)), fields=("u",),
        residual=residual, derivs={"u": ((0, 0),)}, boundary=bcs,
        exact={"u": exact_u}, params={"k": k, "forcing": forcing},
        flux=_gradient_flux("u"),
    )


def heat_conduction_spec(domain=((0.0, 0.0), (2 * math.pi, 2 * math.pi))) -> ProblemSpec:
    """Inverse steady heat conduction ``div(K grad T) = f``: T known inside, K on the boundary."""

    def exact_t(c):
        return exp(-0.1 * c[1]) * 20.0

    def exact_k(c):
        return exp(0.1 * c[1]) * sin(0.5 * c[0]) + 20.0

    def divergence(t, k):
        return (k * t.d((0,))).d((0,)) + (k * t.d((1,))).d((1,))

    def forcing(coords):
        # closed forms differentiated by the jet engine; the result keeps
        # two orders less than the coordinate jets carry
        return divergence(exact_t(coords), exact_k(coords))

    def forcing_values(points):
        p = np.atleast_2d(points)
        keys = full_keys(2, 2)
        c = [Jet.variable(p[:, i:i + 1], i, keys) for i in range(2)]
        return forcing(c).value.data.copy()

    def residual(ctx):
        t, k = ctx["T"], ctx["K"]
        f = ctx.cached("forcing", lambda: forcing(ctx.coords))
        return k * t.d((0, 0)) + k.d((0,)) * t.d((0,)) + k * t.d((1, 1)) + k.d((1,)) * t.d((1,)) - f

    def flux(ctx, normal):
        t, k = ctx["T"], ctx["K"]
        out = None
        for i, n in enumerate(normal):
            if n == 0.0:
                continue
            term = (k * t.d((i,))) * float(n)
            out = term if out is None else out + term
        return out

    lo, hi = domain
    box = Box(lo, hi)
    bcs = []
    for axis in range(2):
        for side in range(2):
            tag = f"{'xy'[axis]}_{'lo' if side == 0 else 'hi'}"
            bcs.append(dirichlet_bc(f"T_{tag}", "T", axis, side, exact_t))
            bcs.append(dirichlet_bc(f"K_{tag}", "K", axis, side, exact_k))
    return ProblemSpec(
        name="heat_conduction", axes=("x", "y"), domain=box, fields=("T", "K"),
        residual=residual, derivs={"T": ((0,), (1,), (0, 0), (1, 1)), "K": ((0,), (1,))},
        boundary=tuple(bcs), exact={"T": exact_t, "K": exact_k},
        data_fields=("T",), metric_field="K", flux=flux,
        params={"forcing": forcing_values},
    )


def _gradient_flux(field_name: str):
    def flux(ctx, normal):
        u = ctx[field_name]
        out = None
        for i, n in enumerate(normal):
            if n == 0.0:
                continue
            term = u.d((i,)) * float(n)
            out = term if out is None else out + term
        return out

    return flux


REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "bl_ode": bl_ode_spec,
    "diffusion_reaction": diffusion_reaction_spec,
    "poisson1d": poisson1d_spec,
    "heat_conduction": heat_conduction_spec,
}


def get_problem(name: str, **params) -> ProblemSpec:
    if name not in REGISTRY:
        raise KeyError(f"unknown problem '{name}' (known: {sorted(REGISTRY)})")
    return REGISTRY[name](**params)


# collocation ------------------------------------------------------------------

@dataclass
class CollocationSet:
    interior: np.ndarray
    boundary: list  # (condition index, points)
    data: np.ndarray
    data_targets: dict
    grad: dict | None = None  # axis -> points; None reuses ``interior``

    def boundary_points(self) -> np.ndarray:
        if not self.boundary:
            return np.zeros((0, self.interior.shape[1]))
        return np.concatenate([p for _, p in self.boundary], axis=0)

    def counts(self) -> dict:
        return {
            "interior": len(self.interior),
            "boundary": sum(len(p) for _, p in self.boundary),
            "data": len(self.data),
        }


def sample_collocation(spec: ProblemSpec, counts: Mapping, strategy: str = "uniform-random",
                       seed: int = 0, region: Box | None = None) -> CollocationSet:
    """Sample interior, boundary, data and gradient-loss point sets.

    ``counts`` keys: ``interior``, ``boundary`` (points per boundary face, or a
    mapping from condition name to count), ``data`` and ``grad`` (omit to reuse
    the interior points for the gradient terms).  With ``region`` only the part
    of the domain inside it is sampled, and boundary faces are clipped to it.
    """
    for k, v in counts.items():
        if isinstance(v, Mapping):
            if any(int(c) < 0 for c in v.values()):
                raise ValueError(f"negative count in '{k}'")
        elif v is not None and int(v) < 0:
            raise ValueError(f"count '{k}' must be non-negative")
    rng = np.random.default_rng(seed)
    box = region or spec.domain
    interior = box.sample(rng, int(counts.get("interior", 0)), strategy)

    nb = counts.get("boundary", 0)
    boundary = []
    for idx, bc in enumerate(spec.boundary):
        n = int(nb.get(bc.name, 0)) if isinstance(nb, Mapping) else int(nb)
        v = spec.domain.lo[bc.axis] if bc.side == 0 else spec.domain.hi[bc.axis]
        on_face = (box.lo[bc.axis] == v) if bc.side == 0 else (box.hi[bc.axis] == v)
        if n == 0 or not on_face:
            continue
        pts = box.sample_face(bc.axis, bc.side, rng, n, strategy)
        pts[:, bc.axis] = v
        boundary.append((idx, pts))

    data = box.sample(rng, int(counts.get("data", 0)), strategy)
    targets = {f: spec.exact_values(f, data) for f in spec.data_fields} if len(data) else \
        {f: np.zeros((0, 1)) for f in spec.data_fields}

    grad = None
    ng = counts.get("grad")
    if ng is not None:
        grad = {i: box.sample(rng, int(ng), strategy) for i in range(spec.dim)}
    return CollocationSet(interior, boundary, data, targets, grad)


def l2_relative_error(pred, exact) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    exact = np.asarray(exact, dtype=np.float64).reshape(-1)
    if pred.shape != exact.shape:
        raise ValueError(f"sample counts differ: {pred.shape} vs {exact.shape}")
    denom = np.linalg.norm(exact)
    if denom == 0.0:
        raise ValueError("exact field has zero norm")
    return float(np.linalg.norm(pred - exact) / denom)
