"""Domain-decomposed training with interface coupling, and data-parallel replicas.

Workers run one phase at a time.  In phase one every subdomain posts its
interface values for epoch ``k``; the executor join is the barrier.  In phase
two each worker takes one step using its own tape plus the other sides'
epoch-``k`` snapshots as constants.  Nothing a worker reads is mutated while
other workers run, so results do not depend on the thread count.

Model-parallel pipelining (layers split over devices) is not executable here.
Its numerics equal sequential training; the cost is roughly
``(stages + microbatches - 1) / microbatches`` times one stage's step time.
"""
from __future__ import annotations

import hashlib
import itertools
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .autodiff import NonFiniteError, Tensor, closure
from .network import init_mlp, mlp_forward, parameter_checksum
from .pinn import (LossWeights, Trainer, TrainHistory, TrainingAborted, as_nets, bind_fields, field_values,
                   default_eval_points, make_record)
from .problems import Box, CollocationSet, ProblemSpec, sample_collocation

INTERFACE_MODES = ("xpinn", "cpinn")


@dataclass
class InterfaceSet:
    pair: tuple  # (i, j), i on the low side of ``axis``
    points: np.ndarray
    axis: int
    weight: float = 20.0

    @property
    def normal(self) -> tuple:
        """Unit normal pointing from subdomain ``i`` into ``j``."""
        n = [0.0] * self.points.shape[1]
        n[self.axis] = 1.0
        return tuple(n)


@dataclass
class Subdomain:
    id: int
    region: Box
    nets: dict = field(default_factory=dict)
    colloc: CollocationSet | None = None
    lr: float = 1e-3
    activation: str = "tanh"
    adaptive: bool = False

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        return self.region.contains(points, tol)


def partition(domain: Box, cuts, n_interface: int = 1, strategy: str = "equispaced",
              seed: int = 0, weight: float = 20.0):
    """Axis-aligned grid decomposition.

    ``cuts`` is a sequence of ``(axis, value)``.  Subdomains are numbered in
    C order of the cell grid.  Interfaces carry ``n_interface`` points on each
    shared face (one point in 1D).
    """
    per_axis = [[domain.lo[a], domain.hi[a]] for a in range(domain.dim)]
    for axis, value in cuts:
        axis, value = int(axis), float(value)
        if not 0 <= axis < domain.dim:
            raise ValueError(f"cut axis {axis} outside a {domain.dim}D domain")
        if not domain.lo[axis] < value < domain.hi[axis]:
            raise ValueError(f"cut {value} on axis {axis} does not lie inside the domain")
        if value in per_axis[axis]:
            raise ValueError(f"repeated cut {value} on axis {axis} leaves an empty subdomain")
        per_axis[axis].append(value)
    edges = [sorted(v) for v in per_axis]
    shape = [len(e) - 1 for e in edges]
    cells = list(itertools.product(*(range(s) for s in shape)))
    index = {c: i for i, c in enumerate(cells)}
    subs = []
    for i, c in enumerate(cells):
        lo = tuple(edges[a][c[a]] for a in range(domain.dim))
        hi = tuple(edges[a][c[a] + 1] for a in range(domain.dim))
        subs.append(Subdomain(i, Box(lo, hi)))
    if not np.isclose(sum(s.region.volume for s in subs), domain.volume, rtol=1e-12, atol=0.0):
        raise ValueError("cuts do not cover the domain")
    rng = np.random.default_rng(seed)
    ifaces = []
    for c in cells:
        for a in range(domain.dim):
            nb = list(c)
            nb[a] += 1
            if nb[a] >= shape[a]:
                continue
            i, j = index[c], index[tuple(nb)]
            pts = subs[i].region.sample_face(a, 1, rng, n_interface, strategy)
            ifaces.append(InterfaceSet((i, j), pts, a, weight))
    return subs, ifaces


# interface terms ---------------------------------------------------------------

def interface_values(nets: Mapping, spec: ProblemSpec, points, normal=None, cache=None) -> dict:
    """Fields, residual and (optionally) normal flux of one side at interface points."""
    nets = as_nets(nets, spec)
    keys = spec.field_keys()
    if normal is not None:
        first = [(i,) for i in range(spec.dim)]
        keys = {f: closure([*k, *first]) for f, k in keys.items()}
    ctx = bind_fields(nets, spec, points, keys, cache)
    out = {"u": {f: ctx.fields[f].value for f in spec.fields},
           "r": spec.residual(ctx).value}
    if normal is not None:
        if spec.flux is None:
            raise ValueError(f"problem '{spec.name}' defines no flux")
        out["flux"] = spec.flux(ctx, normal).value
    return out


def snapshot(values: dict) -> dict:
    """Immutable numpy copy of ``interface_values`` output."""
    def frozen(t):
        a = np.array(t.data if isinstance(t, Tensor) else t, dtype=np.float64)
        a.setflags(write=False)
        return a

    out = {"u": {f: frozen(v) for f, v in values["u"].items()}, "r": frozen(values["r"])}
    if "flux" in values:
        out["flux"] = frozen(values["flux"])
    return out


def _msq(t):
    return (t * t).mean()


def _pair_terms(vi: dict, vj: dict, mode: str):
    """Interface loss from two sides' values; each side may be tensors or arrays."""
    if mode not in INTERFACE_MODES:
        raise ValueError(f"unknown interface mode '{mode}'")
    sol = None
    for f in vi["u"]:
        ui, uj = vi["u"][f], vj["u"][f]
        avg = (ui + uj) * 0.5
        term = (_sq(ui - avg) + _sq(uj - avg)).mean()
        sol = term if sol is None else sol + term
    terms = {"solution": sol, "residual": _msq(vi["r"] - vj["r"])}
    total = sol + terms["residual"]
    if mode == "cpinn":
        terms["flux"] = _msq(vi["flux"] - vj["flux"])
        total = total + terms["flux"]
    return total, terms


def _sq(t):
    return t * t


def interface_loss(nets_i, nets_j, spec: ProblemSpec, points, mode: str = "xpinn", normal=None) -> float:
    """XPINN: average-matching plus residual continuity; cPINN adds flux continuity."""
    points = np.atleast_2d(points)
    if len(points) == 0:
        raise ValueError("interface point set is empty")
    if mode == "cpinn" and normal is None:
        normal = tuple([1.0] + [0.0] * (spec.dim - 1))
    n = normal if mode == "cpinn" else None
    vi = snapshot(interface_values(nets_i, spec, points, n))
    vj = snapshot(interface_values(nets_j, spec, points, n))
    total, _ = _pair_terms(vi, vj, mode)
    return float(total)


class WorkerExchange:
    """Epoch-tagged interface payloads; keeps the two most recent epochs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict = {}

    def post(self, epoch: int, iface: int, side: int, payload: dict) -> None:
        with self._lock:
            self._data[(epoch, iface, side)] = payload
            for k in [k for k in self._data if k[0] < epoch - 1]:
                del self._data[k]

    def get(self, epoch: int, iface: int, side: int) -> dict:
        with self._lock:
            try:
                return self._data[(epoch, iface, side)]
            except KeyError:
                raise RuntimeError(f"interface {iface} side {side} has not posted epoch {epoch}") from None

    def epochs(self) -> set:
        with self._lock:
            return {k[0] for k in self._data}


# decomposed training --------------------------------------------------------------

def setup_subdomains(spec: ProblemSpec, subs: Sequence[Subdomain], counts, layer_sizes,
                     strategy: str = "uniform-random", seed: int = 0) -> None:
    """Sample each subdomain's collocation set and initialise its networks.

    ``counts`` is one mapping for all subdomains or a list with one per
    subdomain.  Seeds are ``seed + id`` for sampling and ``seed + id + k`` for
    the network of field ``k``.
    """
    for s in subs:
        c = counts[s.id] if isinstance(counts, Sequence) else counts
        s.colloc = sample_collocation(spec, c, strategy, seed + s.id, region=s.region)
        if not s.nets:
            s.nets = {f: init_mlp(layer_sizes, s.activation, seed + s.id + k, s.adaptive)
                      for k, f in enumerate(spec.fields)}


@dataclass
class XPINNResult:
    histories: list
    interface_history: list  # per epoch, per interface mismatch before the update
    trainers: list


def xpinn_train(subs: Sequence[Subdomain], interfaces: Sequence[InterfaceSet], spec: ProblemSpec,
                epochs: int, seed: int = 0, weights: LossWeights | None = None, mode: str = "vanilla",
                interface_mode: str = "xpinn", threads: int = 1, sa_lr: float = 1.0,
                eval_points=None) -> XPINNResult:
    """Train every subdomain network on its local loss plus ``w_I`` times its interface terms."""
    if not subs:
        raise ValueError("need at least one subdomain")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    if interface_mode not in INTERFACE_MODES:
        raise ValueError(f"unknown interface mode '{interface_mode}'")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if eval_points is None:
        eval_points = default_eval_points(spec.domain)
    trainers = []
    for s in subs:
        if s.colloc is None or not s.nets:
            raise ValueError(f"subdomain {s.id} is not set up")
        ev = eval_points[s.contains(eval_points)]
        trainers.append(Trainer(s.nets, spec, s.colloc, weights, mode, s.lr, seed + s.id, sa_lr,
                                eval_points=ev if len(ev) else None, name=s.id))
    touching = {s.id: [(k, 0 if iface.pair[0] == s.id else 1) for k, iface in enumerate(interfaces)
                       if s.id in iface.pair] for s in subs}
    normals = [iface.normal if interface_mode == "cpinn" else None for iface in interfaces]
    exchange = WorkerExchange()
    histories = [TrainHistory() for _ in subs]
    iface_hist = []

    def post(idx: int, epoch: int):
        s, tr = subs[idx], trainers[idx]
        try:
            for k, side in touching[s.id]:
                v = interface_values(tr.nets, spec, interfaces[k].points, normals[k], tr.cache)
                exchange.post(epoch, k, side, snapshot(v))
        except NonFiniteError as exc:
            raise TrainingAborted(epoch, str(exc), s.id) from exc

    def step(idx: int, epoch: int):
        s, tr = subs[idx], trainers[idx]
        others = {k: exchange.get(epoch, k, 1 - side) for k, side in touching[s.id]}

        def extra(nets):
            total, info = None, {}
            for k, side in touching[s.id]:
                iface = interfaces[k]
                mine = interface_values(nets, spec, iface.points, normals[k], tr.cache)
                pair = (mine, others[k]) if side == 0 else (others[k], mine)
                term, _ = _pair_terms(*pair, interface_mode)
                term = term * iface.weight
                total = term if total is None else total + term
            info["loss_interface"] = 0.0 if total is None else total.item()
            return (Tensor(0.0) if total is None else total), info

        return tr.step(extra if touching[s.id] else None)

    with ThreadPoolExecutor(max_workers=min(threads, len(subs))) as pool:
        for epoch in range(epochs):
            _gather(pool.map(lambda i: post(i, epoch), range(len(subs))))
            mism = []
            for k in range(len(interfaces)):
                total, _ = _pair_terms(exchange.get(epoch, k, 0), exchange.get(epoch, k, 1), interface_mode)
                mism.append(float(total))
            iface_hist.append(mism)
            recs = _gather(pool.map(lambda i: step(i, epoch), range(len(subs))))
            for h, r in zip(histories, recs):
                h.records.append(r)
    return XPINNResult(histories, iface_hist, trainers)


def _gather(results):
    """Drain an executor map; the first failing worker (lowest id) is reported."""
    out, err = [], None
    it = iter(results)
    while True:
        try:
            out.append(next(it))
        except StopIteration:
            break
        except TrainingAborted as exc:
            err = err or exc
    if err is not None:
        raise err
    return out


def final_interface_mismatch(subs, interfaces, spec, mode: str = "xpinn") -> list[float]:
    return [interface_loss(subs[i].nets, subs[j].nets, spec, iface.points, mode, iface.normal)
            for iface in interfaces for i, j in [iface.pair]]


def stitch_predict(subs: Sequence[Subdomain], x, field_name: str | None = None, tol: float = 1e-12,
                   spec: ProblemSpec | None = None) -> np.ndarray:
    """Owning network's prediction; points shared by several regions get their average."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    member = np.stack([s.contains(x, tol) for s in subs], axis=1)
    if not member.any(axis=1).all():
        bad = x[~member.any(axis=1)][0]
        raise ValueError(f"point {bad.tolist()} lies outside every subdomain")
    out = np.zeros((len(x), 1))
    for k, s in enumerate(subs):
        rows = member[:, k]
        if not rows.any():
            continue
        f = field_name or next(iter(s.nets))
        net = s.nets[f]
        out[rows] += (mlp_forward(net, x[rows]) if spec is None else field_values(net, spec, f, x[rows])).data
    return out / member.sum(axis=1, keepdims=True)


# data parallel --------------------------------------------------------------------

def allreduce_mean(grad_sets: Sequence[Sequence[np.ndarray]]) -> list[np.ndarray]:
    """Elementwise mean over replicas, summed in ascending replica order."""
    if not grad_sets:
        raise ValueError("no replicas")
    first = grad_sets[0]
    for r, gs in enumerate(grad_sets):
        if len(gs) != len(first) or any(np.shape(a) != np.shape(b) for a, b in zip(gs, first)):
            raise ValueError(f"replica {r} gradient shapes differ from replica 0")
    out = []
    for k in range(len(first)):
        acc = np.array(grad_sets[0][k], dtype=np.float64)
        for gs in grad_sets[1:]:
            acc = acc + gs[k]
        out.append(acc / len(grad_sets))
    return out


def _chunks(a: np.ndarray, r: int, pad: bool, what: str) -> list[np.ndarray]:
    n = len(a)
    if n % r:
        if not pad:
            raise ValueError(f"{n} {what} points cannot be split into {r} equal chunks")
        extra = r - n % r
        a = np.concatenate([a, a[np.arange(extra) % n]], axis=0)
    return np.split(a, r)


def split_collocation(spec: ProblemSpec, colloc: CollocationSet, r: int, pad: bool = False) -> list[CollocationSet]:
    """Contiguous equal chunks of every point family (boundary groups are split after concatenation)."""
    interior = _chunks(colloc.interior, r, pad, "interior")
    tags = np.concatenate([np.full(len(p), i) for i, p in colloc.boundary]) if colloc.boundary else np.zeros(0)
    bpts = colloc.boundary_points()
    order = np.arange(len(bpts))
    b_chunks = _chunks(order, r, pad, "boundary") if len(bpts) else [order] * r
    data = _chunks(colloc.data, r, pad, "data") if len(colloc.data) else [colloc.data] * r
    dorder = _chunks(np.arange(len(colloc.data)), r, pad, "data") if len(colloc.data) else [np.arange(0)] * r
    grads = None
    if colloc.grad is not None:
        grads = {i: _chunks(p, r, pad, "gradient") for i, p in colloc.grad.items()}
    out = []
    for k in range(r):
        groups = []
        for idx in np.unique(tags[b_chunks[k]]).astype(int) if len(bpts) else []:
            sel = b_chunks[k][tags[b_chunks[k]] == idx]
            groups.append((int(idx), bpts[sel]))
        targets = {f: v[dorder[k]] for f, v in colloc.data_targets.items()} if len(colloc.data) \
            else dict(colloc.data_targets)
        out.append(CollocationSet(interior[k], groups, data[k], targets,
                                  None if grads is None else {i: g[k] for i, g in grads.items()}))
    return out


@dataclass
class DataParallelResult:
    history: TrainHistory
    checksums: list  # per epoch, one digest per replica
    replicas: list


def data_parallel_train(spec: ProblemSpec, nets, colloc: CollocationSet, replicas: int, epochs: int,
                        base_lr: float = 1e-3, seed: int = 0, weights: LossWeights | None = None,
                        mode: str = "vanilla", pad: bool = False, threads: int = 1,
                        eval_points=None) -> DataParallelResult:
    """Lockstep replicas on equal chunks; averaged gradients, shared Adam step at ``base_lr * R``."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if mode == "sa":
        raise ValueError("self-adaptive weights are per point and are not split across replicas")
    if epochs < 0:
        raise ValueError("epochs must be non-negative")
    nets = as_nets(nets, spec)
    chunks = split_collocation(spec, colloc, replicas, pad)
    if eval_points is None:
        eval_points = default_eval_points(spec.domain)
    lr = base_lr * replicas
    trainers = [Trainer({f: n.copy() for f, n in nets.items()}, spec, chunks[r], weights, mode, lr,
                        seed, eval_points=eval_points, name=r) for r in range(replicas)]
    hist = TrainHistory()
    sums = []
    with ThreadPoolExecutor(max_workers=max(1, min(threads, replicas))) as pool:
        for epoch in range(epochs):
            t0 = time.perf_counter()
            metric = trainers[0].metric()

            def work(r):
                try:
                    return trainers[r].gradients()
                except NonFiniteError as exc:
                    raise TrainingAborted(epoch, str(exc), r) from exc

            outs = _gather(pool.map(work, range(replicas)))
            avg = allreduce_mean([o[2] for o in outs])
            for tr in trainers:
                tr.apply(avg)
                tr.epoch += 1
            comps = {k: _ordered_mean([o[1][k] for o in outs]) for k in outs[0][1]}
            total = _ordered_mean([o[0].item() for o in outs])
            hist.records.append(make_record(epoch, comps, metric, total, {}, t0))
            sums.append([_checksum(tr) for tr in trainers])
    for f in nets:
        for p, q in zip(nets[f].parameters(), trainers[0].nets[f].parameters()):
            p.data = q.data.copy()
    return DataParallelResult(hist, sums, trainers)


def _ordered_mean(vals):
    acc = vals[0]
    for v in vals[1:]:
        acc = acc + v
    return acc / len(vals)


def _checksum(tr: Trainer) -> str:
    h = hashlib.sha256()
    for f in tr.spec.fields:
        h.update(parameter_checksum(tr.nets[f]).encode())
    return h.hexdigest()
