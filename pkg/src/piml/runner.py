"""Execute a validated experiment config and write its artifacts."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import platform
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import GRAPH_DEFAULTS, config_hash
from .network import init_mlp, parameter_checksum, save_checkpoint
from .pinn import (LossWeights, Trainer, TrainHistory, TrainingAborted, default_eval_points, field_values,
                   format_float)
from .problems import get_problem, l2_relative_error, sample_collocation
from . import xpinn as dd
from .graph import calculus as gc


class RunAborted(RuntimeError):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _floatify(v):
    if isinstance(v, dict):
        return {k: _floatify(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_floatify(x) for x in v]
    if isinstance(v, (np.floating, float)):
        f = float(v)
        return f if np.isfinite(f) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def run(cfg: dict, out_dir, threads: int = 1) -> dict:
    """Run one experiment; returns the summary dict.  Raises ``RunAborted`` on training failure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_sha256": config_hash(cfg), "version": __version__, "start": _now(),
                "kernel_backend": kernels.BACKEND, "python": platform.python_version(),
                "numpy": np.__version__, "status": "running"}
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    t0 = time.perf_counter()
    try:
        if cfg["mode"] == "graph":
            summary = _run_graph(cfg, out)
        elif cfg["mode"] == "xpinn":
            summary = _run_xpinn(cfg, out, threads)
        elif cfg["mode"] == "data_parallel":
            summary = _run_data_parallel(cfg, out, threads)
        else:
            summary = _run_pinn(cfg, out)
        manifest["status"] = "ok"
    except TrainingAborted as exc:
        manifest["status"] = "aborted"
        summary = {"status": "aborted", "epoch": exc.epoch, "worker": exc.worker, "error": str(exc)}
        _write_json(out / "summary.json", _floatify(summary))
        raise RunAborted(str(exc)) from exc
    finally:
        manifest["end"] = _now()
        manifest["wall_time_s"] = time.perf_counter() - t0
        _write_json(out / "manifest.json", manifest)
    summary["status"] = "ok"
    summary["wall_time_s"] = manifest["wall_time_s"]
    _write_json(out / "summary.json", _floatify(summary))
    return summary


# pinn family ------------------------------------------------------------------------

def _spec(cfg):
    return get_problem(cfg["problem"], **cfg["problem_params"])


def _counts(cfg, override=None) -> dict:
    c = dict(cfg["collocation"])
    if override:
        c.update({k: v for k, v in override.items() if k in ("interior", "boundary", "data", "grad")})
    return {k: c[k] for k in ("interior", "boundary", "data", "grad")}


def _weights(cfg) -> LossWeights:
    w = cfg["weights"]
    return LossWeights(w["w_f"], w["w_b"], w["w_i"], tuple(w["w_g"]))


def _eval_points(cfg, spec):
    n = cfg["eval"]["grid"]
    return default_eval_points(spec.domain) if n is None else spec.domain.grid(n)


def _nets(cfg, spec, seed, activation=None, adaptive=None):
    net = cfg["network"]
    sizes = [spec.dim, *net["hidden"], 1]
    return {f: init_mlp(sizes, activation or net["activation"], seed + k,
                        net["adaptive"] if adaptive is None else adaptive)
            for k, f in enumerate(spec.fields)}


def _field_errors(spec, nets_predict, points) -> dict:
    out = {}
    for f in spec.fields:
        if spec.exact and f in spec.exact:
            out[f] = l2_relative_error(nets_predict(f, points), spec.exact_values(f, points))
    return out


def _checkpoints(cfg, out: Path, nets: dict, prefix: str = "checkpoint") -> dict:
    if not cfg["output"]["checkpoints"]:
        return {}
    files = {}
    for f, net in nets.items():
        name = f"{prefix}_{f}.json"
        save_checkpoint(net, out / name)
        files[f] = name
    return files


def _run_pinn(cfg, out: Path) -> dict:
    spec = _spec(cfg)
    seed = cfg["seed"]
    counts = _counts(cfg)
    strategy = cfg["collocation"]["strategy"]
    colloc = sample_collocation(spec, counts, strategy, seed)
    nets = _nets(cfg, spec, seed)
    ev = _eval_points(cfg, spec)
    tr = Trainer(nets, spec, colloc, _weights(cfg), cfg["mode"], cfg["lr"], seed, cfg["sa"]["lr"],
                 cfg["sa"]["init"], ev)
    hist = TrainHistory()
    every = cfg["collocation"]["resample_every"]
    try:
        for k in range(cfg["epochs"]):
            if every and k and k % every == 0:
                tr.colloc = sample_collocation(spec, counts, strategy, seed + k)
                tr.cache.clear()
            hist.records.append(tr.step())
    finally:
        hist.to_csv(out / "history.csv", cfg["output"]["record_wall_time"])
    summary = _history_summary(hist)
    summary.update(mode=cfg["mode"], problem=spec.name, epochs=cfg["epochs"],
                   l2_rel_error=_field_errors(spec, lambda f, p: field_values(nets[f], spec, f, p).data, ev),
                   checkpoints=_checkpoints(cfg, out, nets),
                   parameter_checksums={f: parameter_checksum(n) for f, n in nets.items()})
    if tr.lam is not None:
        summary["sa_lambda_median"] = {"r": float(np.median(tr.lam.lam_r)) if tr.lam.lam_r.size else None,
                                       "b": float(np.median(tr.lam.lam_b)) if tr.lam.lam_b.size else None,
                                       "0": float(np.median(tr.lam.lam_0)) if tr.lam.lam_0.size else None}
    return summary


def _history_summary(hist: TrainHistory) -> dict:
    if not len(hist):
        return {"final": {}}
    last = hist.final()
    last.pop("elapsed_ms", None)
    return {"final": last, "train_time_ms": float(hist.column("elapsed_ms").sum())}


def _run_xpinn(cfg, out: Path, threads: int) -> dict:
    spec = _spec(cfg)
    x = cfg["xpinn"]
    seed = cfg["seed"]
    subs, ifaces = dd.partition(spec.domain, [tuple(c) for c in x["cuts"]], x["interface_points"],
                                "equispaced", seed, x["interface_weight"])
    per = x["subdomains"] or [{} for _ in subs]
    counts = []
    for s, o in zip(subs, per):
        s.lr = o.get("lr", cfg["lr"])
        s.activation = o.get("activation", cfg["network"]["activation"])
        s.adaptive = o.get("adaptive", cfg["network"]["adaptive"])
        s.nets = _nets(cfg, spec, seed + s.id, s.activation, s.adaptive)
        counts.append(_counts(cfg, o))
    dd.setup_subdomains(spec, subs, counts, None, cfg["collocation"]["strategy"], seed)
    ev = _eval_points(cfg, spec)
    res = dd.xpinn_train(subs, ifaces, spec, cfg["epochs"], seed, _weights(cfg), x["mode_inner"],
                         x["interface_mode"], threads, cfg["sa"]["lr"], ev)
    for s, h in zip(subs, res.histories):
        h.to_csv(out / f"history_sub{s.id}.csv", cfg["output"]["record_wall_time"])
    mism = dd.final_interface_mismatch(subs, ifaces, spec, x["interface_mode"]) if ifaces else []
    with open(out / "interfaces.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *[f"iface{k}_{i}_{j}" for k, (i, j) in enumerate(f.pair for f in ifaces)]])
        for e, row in enumerate(res.interface_history):
            w.writerow([e, *[format_float(v) for v in row]])
    subs_summary = []
    for s, h in zip(subs, res.histories):
        d = _history_summary(h)
        d.update(id=s.id, region={"lo": list(s.region.lo), "hi": list(s.region.hi)},
                 counts=s.colloc.counts(), lr=s.lr, activation=s.activation,
                 checkpoints=_checkpoints(cfg, out, s.nets, f"checkpoint_sub{s.id}"))
        subs_summary.append(d)
    return {"mode": "xpinn", "problem": spec.name, "epochs": cfg["epochs"], "subdomains": subs_summary,
            "interface_mismatch": mism,
            "l2_rel_error": _field_errors(spec, lambda f, p: dd.stitch_predict(subs, p, f, spec=spec), ev)}


def _run_data_parallel(cfg, out: Path, threads: int) -> dict:
    spec = _spec(cfg)
    seed = cfg["seed"]
    dp = cfg["data_parallel"]
    colloc = sample_collocation(spec, _counts(cfg), cfg["collocation"]["strategy"], seed)
    nets = _nets(cfg, spec, seed)
    ev = _eval_points(cfg, spec)
    try:
        res = dd.data_parallel_train(spec, nets, colloc, dp["replicas"], cfg["epochs"], cfg["lr"], seed,
                                     _weights(cfg), dp["mode"], dp["pad"], threads, ev)
    except ValueError as exc:
        raise TrainingAborted(0, str(exc)) from exc
    res.history.to_csv(out / "history.csv", cfg["output"]["record_wall_time"])
    identical = all(len(set(row)) == 1 for row in res.checksums)
    summary = _history_summary(res.history)
    summary.update(mode="data_parallel", problem=spec.name, epochs=cfg["epochs"], replicas=dp["replicas"],
                   checksums_identical=identical,
                   final_checksum=res.checksums[-1][0] if res.checksums else None,
                   l2_rel_error=_field_errors(spec, lambda f, p: field_values(nets[f], spec, f, p).data, ev),
                   checkpoints=_checkpoints(cfg, out, nets))
    return summary


# graph tasks ---------------------------------------------------------------------

def _graph(g, rng):
    if g.get("edges"):
        graph = gc.read_edge_list(g["edges"])
    else:
        r = g.get("random", {"n": 10, "p": 0.3})
        graph = gc.random_graph(int(r["n"]), float(r.get("p", 0.3)), rng, connected=True)
    return gc.build_complex(graph)


def _run_graph(cfg, out: Path) -> dict:
    g = {**GRAPH_DEFAULTS[cfg["graph"]["task"]], **cfg["graph"]}
    rng = np.random.default_rng(cfg["seed"])
    task = g["task"]
    if task == "diffusion":
        cx = _graph(g, rng)
        x = rng.uniform(-1.0, 1.0, cx.graph.n)
        traj = [x]
        for _ in range(int(g["steps"])):
            traj.append(gc.diffusion_step(cx, traj[-1], float(g["alpha"])).values)
        alpha = gc.fit_diffusion(cx, traj)
        _write_rows(out / "trajectory.csv", ["step", *[f"node{i}" for i in range(cx.graph.n)]],
                    [[k, *row] for k, row in enumerate(traj)])
        gc.write_edge_list(cx.graph, out / "graph.edges")
        return {"mode": "graph", "task": task, "alpha_true": float(g["alpha"]), "alpha_hat": alpha,
                "alpha_error": abs(alpha - float(g["alpha"]))}
    if task == "flux":
        cx = _graph(g, rng)
        truth = gc.polynomial_flux([0.0, 0.0, float(g["coeff"])])
        pairs = []
        for _ in range(int(g["pairs"])):
            u = rng.uniform(-1.0, 1.0, cx.graph.n)
            pairs.append((u, gc.flux_operator(cx, u, truth)))
        if g["model"] == "mlp":
            model = gc.mlp_flux(tuple(g["hidden"]), seed=cfg["seed"])
        else:
            model = gc.polynomial_flux(np.zeros(3))
        hist = gc.fit_flux_model(cx, pairs, model, cfg["epochs"], float(g["lr"]), g.get("lr_final"))
        _write_rows(out / "history.csv", ["epoch", "loss"], [[k, v] for k, v in enumerate(hist)])
        summary = {"mode": "graph", "task": task, "final_loss": hist[-1],
                   "operator_residual_rms": gc.flux_residual(cx, pairs, model)}
        if model.coeffs is not None:
            summary["theta_hat"] = model.coeffs.data.reshape(-1).tolist()
        elif cfg["output"]["checkpoints"]:
            save_checkpoint(model.net, out / "checkpoint_flux.json")
            summary["checkpoints"] = {"flux": "checkpoint_flux.json"}
        return summary
    # stencil
    n, h = int(g["nodes"]), float(g["h"])
    xs = np.arange(n) * h
    nodes, nb = gc.chain_neighborhoods(n)
    samples = [(xs ** p, (p * (p - 1) * xs ** max(p - 2, 0))[nodes]) for p in range(3)]
    st = gc.fit_stencil(samples, nodes, nb, shared=bool(g["shared"]))
    target = np.array([1.0, -2.0, 1.0]) / h ** 2
    err = max(float(np.max(np.abs(c - target))) for c in st.coeffs)
    _write_rows(out / "stencil.csv", ["node", "c_left", "c_self", "c_right"],
                [[int(i), *c] for i, c in zip(nodes, st.coeffs)])
    return {"mode": "graph", "task": task, "theta_hat": st.coeffs[0].tolist(), "max_error": err}


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, (int, np.integer)) else format_float(v) for v in r])
