"""PINN losses and training: vanilla, self-adaptive (minimax) and gradient-enhanced."""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import Jet, closure, NonFiniteError, Tensor, concat, grad_params, parameter
from .network import MLP, AdamState, adam_step, ascent_step, mlp_forward
from .problems import CollocationSet, FieldContext, ProblemSpec, l2_relative_error

MODES = ("vanilla", "sa", "gpinn")
HISTORY_COLUMNS = ("epoch", "loss_f", "loss_b", "loss_i", "loss_g_total", "l2_rel_error", "elapsed_ms")


class TrainingAborted(RuntimeError):
    def __init__(self, epoch: int, reason: str, worker=None):
        where = f" in worker {worker}" if worker is not None else ""
        super().__init__(f"training aborted at epoch {epoch}{where}: {reason}")
        self.epoch = epoch
        self.worker = worker


@dataclass
class LossWeights:
    w_f: float = 1.0
    w_b: float = 1.0
    w_i: float = 1.0
    w_g: Sequence[float] = ()

    def __post_init__(self):
        vals = [self.w_f, self.w_b, self.w_i, *self.w_g]
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise ValueError(f"loss weights must be finite and non-negative, got {vals}")

    def grad_weights(self, dim: int) -> list[float]:
        w = list(self.w_g)
        if len(w) == 1 and dim > 1:
            w = w * dim
        if w and len(w) != dim:
            raise ValueError(f"need {dim} gradient weights, got {len(w)}")
        return w or [0.0] * dim


@dataclass
class SAWeights:
    """Per-point self-adaptation multipliers."""

    lam_r: np.ndarray
    lam_b: np.ndarray
    lam_0: np.ndarray

    @classmethod
    def ones(cls, spec: ProblemSpec, colloc: CollocationSet, value: float = 1.0) -> "SAWeights":
        nb, n0 = _boundary_split_counts(spec, colloc)
        return cls(np.full((len(colloc.interior), 1), value), np.full((nb, 1), value), np.full((n0, 1), value))

    def copy(self) -> "SAWeights":
        return SAWeights(self.lam_r.copy(), self.lam_b.copy(), self.lam_0.copy())


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def trajectory(self) -> list[tuple]:
        """Every recorded quantity except wall time, for exact comparisons."""
        return [tuple((k, v) for k, v in r.items() if k != "elapsed_ms") for r in self.records]

    def final(self) -> dict:
        return dict(self.records[-1]) if self.records else {}

    def to_csv(self, path, record_time: bool = False) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                row = [str(r["epoch"])]
                for c in HISTORY_COLUMNS[1:-1]:
                    row.append(format_float(r[c]))
                row.append(format_float(r["elapsed_ms"]) if record_time else "")
                w.writerow(row)


def format_float(v: float) -> str:
    return "%.17g" % v


def as_nets(nets, spec: ProblemSpec) -> dict:
    if isinstance(nets, MLP):
        if len(spec.fields) != 1:
            raise ValueError(f"problem '{spec.name}' needs networks for fields {spec.fields}")
        return {spec.fields[0]: nets}
    missing = [f for f in spec.fields if f not in nets]
    if missing:
        raise ValueError(f"missing networks for fields {missing}")
    return dict(nets)


def all_parameters(nets: Mapping, spec: ProblemSpec) -> list[Tensor]:
    return [p for f in spec.fields for p in nets[f].parameters()]


# field evaluation --------------------------------------------------------------

def _context(points, keys: dict, cache: dict | None, spec: ProblemSpec) -> FieldContext:
    union = frozenset().union(*keys.values())
    if cache is None:
        ctx = FieldContext(points, union)
    else:
        ck = (id(points), union)
        hit = cache.get(ck)
        if hit is None or hit[0] is not points:
            hit = (points, FieldContext(points, union))
            cache[ck] = hit
        ctx = hit[1]
    ctx.params = dict(spec.params)
    return ctx


def bind_fields(nets: Mapping, spec: ProblemSpec, points, keys: dict, cache=None,
                fields: Sequence[str] | None = None) -> FieldContext:
    ctx = _context(points, keys, cache, spec)
    ctx.fields = {}
    for f in (fields or spec.fields):
        raw = mlp_forward(nets[f], Jet.inputs(ctx.points, keys[f]))
        if spec.transform and f in spec.transform:
            raw = spec.transform[f](ctx.coords, raw).truncate(keys[f])
        ctx.fields[f] = raw
    return ctx


def field_values(net: MLP, spec: ProblemSpec, field_name: str, points) -> Tensor:
    """Surrogate values of one field on a (batch, dim) point array."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    raw = mlp_forward(net, Tensor(x))
    if spec.transform and field_name in spec.transform:
        return spec.transform[field_name]([Tensor(x[:, i:i + 1]) for i in range(x.shape[1])], raw)
    return raw


def residual_jet(nets, spec: ProblemSpec, points, grad_axes: Sequence[int] = (), cache=None) -> Jet:
    if spec.max_deriv_order + (1 if grad_axes else 0) > 3:
        raise ValueError(f"derivative order budget exceeded for problem '{spec.name}'")
    nets = as_nets(nets, spec)
    ctx = bind_fields(nets, spec, points, spec.field_keys(grad_axes), cache)
    return spec.residual(ctx)


def pde_residual(nets, spec: ProblemSpec, points, cache=None) -> Tensor:
    """Residual values (batch,) with all input derivatives from jets."""
    return residual_jet(nets, spec, np.atleast_2d(points), cache=cache).value.reshape(-1)


def _mean_square(t: Tensor) -> Tensor:
    return (t * t).mean()


def loss_residual(nets, spec: ProblemSpec, points, cache=None) -> Tensor:
    if len(points) == 0:
        raise ValueError("residual point set is empty")
    return _mean_square(pde_residual(nets, spec, points, cache))


def boundary_residuals(nets, spec: ProblemSpec, groups, cache=None) -> list[tuple[int, Tensor]]:
    nets = as_nets(nets, spec)
    out = []
    for idx, pts in groups:
        bc = spec.boundary[idx]
        fields = bc.fields or spec.fields
        keys = {f: closure([(), *bc.derivs.get(f, ())]) for f in spec.fields}
        ctx = bind_fields(nets, spec, pts, keys, cache, fields=fields)
        out.append((idx, bc.operator(ctx).value.reshape(-1)))
    return out


def loss_boundary(nets, spec: ProblemSpec, groups, cache=None) -> Tensor:
    res = boundary_residuals(nets, spec, groups, cache)
    if not res:
        raise ValueError("boundary point set is empty")
    vals = res[0][1] if len(res) == 1 else concat([r for _, r in res])
    return _mean_square(vals)


def loss_data(nets, spec: ProblemSpec, points, targets: Mapping, cache=None) -> Tensor:
    if len(points) == 0:
        raise ValueError("data point set is empty")
    nets = as_nets(nets, spec)
    total = None
    for f, tgt in targets.items():
        pred = field_values(nets[f], spec, f, points)
        term = _mean_square(pred - np.asarray(tgt).reshape(pred.shape))
        total = term if total is None else total + term
    return total


def total_loss(nets, spec: ProblemSpec, colloc: CollocationSet, weights: LossWeights, cache=None):
    """Weighted sum ``w_f L_f + w_b L_b + w_i L_i``; returns (loss, components)."""
    loss, comps = _base_terms(nets, spec, colloc, weights, cache)
    return loss, comps


def _base_terms(nets, spec, colloc, weights, cache, lf: Tensor | None = None):
    terms, comps = [], {"loss_f": 0.0, "loss_b": 0.0, "loss_i": 0.0, "loss_g_total": 0.0}
    if len(colloc.interior):
        if lf is None:
            lf = loss_residual(nets, spec, colloc.interior, cache)
        comps["loss_f"] = lf.item()
        if weights.w_f:
            terms.append(lf * weights.w_f)
    elif weights.w_f:
        raise ValueError("residual points required when w_f > 0")
    if colloc.boundary:
        lb = loss_boundary(nets, spec, colloc.boundary, cache)
        comps["loss_b"] = lb.item()
        if weights.w_b:
            terms.append(lb * weights.w_b)
    if len(colloc.data) and colloc.data_targets:
        li = loss_data(nets, spec, colloc.data, colloc.data_targets, cache)
        comps["loss_i"] = li.item()
        if weights.w_i:
            terms.append(li * weights.w_i)
    loss = _sum_terms(terms)
    return loss, comps


def _sum_terms(terms: list) -> Tensor:
    if not terms:
        return Tensor(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def gpinn_loss(nets, spec: ProblemSpec, colloc: CollocationSet, weights: LossWeights, cache=None):
    """``total_loss`` plus ``sum_i w_gi * mean |df/dx_i|^2``."""
    wg = weights.grad_weights(spec.dim)
    axes = [i for i, w in enumerate(wg) if w > 0]
    if not axes:
        return total_loss(nets, spec, colloc, weights, cache)
    if spec.max_deriv_order + 1 > 3:
        raise ValueError(f"gradient-enhanced loss would need order {spec.max_deriv_order + 1} > 3")
    lf = None
    grad_terms, gsum = [], 0.0
    if colloc.grad is None:
        r = residual_jet(nets, spec, colloc.interior, axes, cache)
        rv = r.value.reshape(-1)
        lf = _mean_square(rv)
        for i in axes:
            lg = _mean_square(r[(i,)].reshape(-1))
            grad_terms.append(lg * wg[i])
            gsum += wg[i] * lg.item()
    else:
        for i in axes:
            r = residual_jet(nets, spec, colloc.grad[i], [i], cache)
            lg = _mean_square(r[(i,)].reshape(-1))
            grad_terms.append(lg * wg[i])
            gsum += wg[i] * lg.item()
    base, comps = _base_terms(nets, spec, colloc, weights, cache, lf=lf)
    comps["loss_g_total"] = gsum
    return _sum_terms([base, *grad_terms]), comps


# self-adaptive weights ------------------------------------------------------------

def _boundary_split_counts(spec, colloc) -> tuple[int, int]:
    nb = sum(len(p) for i, p in colloc.boundary if spec.boundary[i].kind != "initial")
    n0 = sum(len(p) for i, p in colloc.boundary if spec.boundary[i].kind == "initial")
    return nb, n0


def sa_total_loss(nets, spec: ProblemSpec, colloc: CollocationSet, lam, weights: LossWeights | None = None,
                  cache=None):
    """``mean (lam_r r)^2 + mean (lam_b b)^2 + mean (lam_0 b0)^2`` (+ unweighted data term).

    ``lam`` is an ``SAWeights`` or a triple of tensors (for differentiation).
    """
    weights = weights or LossWeights()
    lam_r, lam_b, lam_0 = (lam.lam_r, lam.lam_b, lam.lam_0) if isinstance(lam, SAWeights) else lam
    nb, n0 = _boundary_split_counts(spec, colloc)
    if np.shape(_data(lam_r))[0] != len(colloc.interior) or np.shape(_data(lam_b))[0] != nb \
            or np.shape(_data(lam_0))[0] != n0:
        raise ValueError("self-adaptive weight counts do not match the collocation points")
    terms = []
    comps = {"loss_f": 0.0, "loss_b": 0.0, "loss_i": 0.0, "loss_g_total": 0.0}
    if len(colloc.interior):
        r = pde_residual(nets, spec, colloc.interior, cache).reshape(-1, 1)
        comps["loss_f"] = _mean_square(r).item()
        terms.append(_mean_square(r * lam_r))
    if colloc.boundary:
        res = boundary_residuals(nets, spec, colloc.boundary, cache)
        b = [v for i, v in res if spec.boundary[i].kind != "initial"]
        b0 = [v for i, v in res if spec.boundary[i].kind == "initial"]
        allb = concat([v for _, v in res]) if len(res) > 1 else res[0][1]
        comps["loss_b"] = _mean_square(allb).item()
        if b:
            bv = (concat(b) if len(b) > 1 else b[0]).reshape(-1, 1)
            terms.append(_mean_square(bv * lam_b))
        if b0:
            b0v = (concat(b0) if len(b0) > 1 else b0[0]).reshape(-1, 1)
            terms.append(_mean_square(b0v * lam_0))
    if len(colloc.data) and colloc.data_targets:
        li = loss_data(nets, spec, colloc.data, colloc.data_targets, cache)
        comps["loss_i"] = li.item()
        if weights.w_i:
            terms.append(li * weights.w_i)
    return _sum_terms(terms), comps


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def descent_ascent_step(nets, spec: ProblemSpec, colloc: CollocationSet, lam: SAWeights,
                        adam: AdamState | None, eta_lam: float, weights: LossWeights | None = None,
                        cache=None, update_network: bool = True):
    """One Adam descent step on the networks and one ascent step on every lambda family.

    Both use gradients of the same loss evaluation.  Returns (new lambdas, loss, components).
    """
    if eta_lam <= 0:
        raise ValueError("ascent rate must be positive")
    nets = as_nets(nets, spec)
    lt = [parameter(lam.lam_r), parameter(lam.lam_b), parameter(lam.lam_0)]
    loss, comps = sa_total_loss(nets, spec, colloc, lt, weights, cache)
    theta = all_parameters(nets, spec)
    grads = grad_params(loss, theta + lt)
    if update_network:
        adam_step(theta, grads[:len(theta)], adam)
    new = SAWeights(*(ascent_step(l, g, eta_lam) for l, g in zip(lt, grads[len(theta):])))
    return new, loss, comps


# training ---------------------------------------------------------------------------

class Trainer:
    """Holds the optimiser state of one PINN run; ``step`` performs one epoch."""

    def __init__(self, nets, spec: ProblemSpec, colloc: CollocationSet, weights: LossWeights | None = None,
                 mode: str = "vanilla", lr: float = 1e-3, seed: int = 0, sa_lr: float = 1.0,
                 sa_init: float = 1.0, eval_points=None, region=None, name=None):
        if mode not in MODES:
            raise ValueError(f"unknown training mode '{mode}' (expected one of {MODES})")
        self.spec = spec
        self.nets = as_nets(nets, spec)
        self.colloc = colloc
        self.weights = weights or LossWeights()
        self.mode = mode
        self.adam = AdamState(lr=lr)
        self.params = all_parameters(self.nets, spec)
        self.cache: dict = {}
        self.name = name
        self.rng = np.random.default_rng(seed)
        self.sa_lr = sa_lr
        self.lam = SAWeights.ones(spec, colloc, sa_init) if mode == "sa" else None
        if mode == "gpinn" and spec.max_deriv_order + 1 > 3:
            raise ValueError(f"gpinn needs residual derivative order <= 2, '{spec.name}' has {spec.max_deriv_order}")
        self.eval_points = eval_points
        self.eval_exact = None
        metric = spec.primary_field
        if eval_points is not None and spec.exact and metric in spec.exact:
            self.eval_exact = spec.exact_values(metric, eval_points)
        self.epoch = 0

    def objective(self):
        if self.mode == "gpinn":
            return gpinn_loss(self.nets, self.spec, self.colloc, self.weights, self.cache)
        return total_loss(self.nets, self.spec, self.colloc, self.weights, self.cache)

    def metric(self) -> float:
        if self.eval_exact is None:
            return float("nan")
        f = self.spec.primary_field
        pred = field_values(self.nets[f], self.spec, f, self.eval_points).data
        return l2_relative_error(pred, self.eval_exact)

    def gradients(self, extra: Callable | None = None):
        """Loss, components and parameter gradients (theta first, then lambdas).

        ``extra(nets)`` may add a ``(tensor, info)`` term to the loss.
        """
        info = {}
        if self.mode == "sa":
            lam_t = [parameter(self.lam.lam_r), parameter(self.lam.lam_b), parameter(self.lam.lam_0)]
            loss, comps = sa_total_loss(self.nets, self.spec, self.colloc, lam_t, self.weights, self.cache)
        else:
            lam_t = []
            loss, comps = self.objective()
        if extra is not None:
            term, info = extra(self.nets)
            loss = loss + term
        grads = grad_params(loss, self.params + lam_t)
        if not np.isfinite(loss.item()) or not all(np.isfinite(g).all() for g in grads):
            raise NonFiniteError("non-finite loss or gradient")
        return loss, comps, grads, lam_t, info

    def apply(self, grads, lam_t=()) -> None:
        adam_step(self.params, grads[:len(self.params)], self.adam)
        if lam_t:
            self.lam = SAWeights(*(ascent_step(l, g, self.sa_lr)
                                   for l, g in zip(lam_t, grads[len(self.params):])))

    def step(self, extra: Callable | None = None) -> dict:
        """One epoch: metric on the current parameters, then one optimiser update."""
        t0 = time.perf_counter()
        epoch = self.epoch
        try:
            metric = self.metric()
            loss, comps, grads, lam_t, info = self.gradients(extra)
            self.apply(grads, lam_t)
        except NonFiniteError as exc:
            raise TrainingAborted(epoch, str(exc), self.name) from exc
        self.epoch += 1
        return make_record(epoch, comps, metric, loss.item(), info, t0)


def make_record(epoch, comps, metric, loss_total, info, t0) -> dict:
    return {"epoch": epoch, **comps, "l2_rel_error": metric, "loss_total": loss_total, **info,
            "elapsed_ms": (time.perf_counter() - t0) * 1e3}


def train(nets, spec: ProblemSpec, colloc: CollocationSet, weights: LossWeights | None = None,
          mode: str = "vanilla", epochs: int = 1000, lr: float = 1e-3, seed: int = 0,
          sa_lr: float = 1.0, sa_init: float = 1.0, eval_points=None, callback=None) -> TrainHistory:
    """Train in place; returns the per-epoch history.

    ``eval_points`` defaults to a 200-point (1D) or 50x50 (2D) grid of the domain.
    """
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if eval_points is None:
        eval_points = default_eval_points(spec.domain)
    trainer = Trainer(nets, spec, colloc, weights, mode, lr, seed, sa_lr, sa_init, eval_points)
    hist = TrainHistory()
    for _ in range(epochs):
        hist.records.append(trainer.step())
        if callback is not None:
            callback(trainer)
    return hist


def default_eval_points(box) -> np.ndarray:
    return box.grid(200 if box.dim == 1 else 50)
