"""Experiment configuration: JSON schema ``piml.experiment/1``, defaults and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any

from .autodiff.jet import ACTIVATIONS
from .problems import REGISTRY, get_problem
from .pinn import MODES as PINN_MODES

SCHEMA = "piml.experiment/1"
MODES = (*PINN_MODES, "xpinn", "data_parallel", "graph")
GRAPH_TASKS = ("diffusion", "flux", "stencil")
STRATEGIES = ("uniform-random", "equispaced", "halton")

DEFAULTS: dict[str, Any] = {
    "schema": SCHEMA,
    "problem_params": {},
    "epochs": 1000,
    "lr": 1e-3,
    "network": {"hidden": [20, 20, 20], "activation": "tanh", "adaptive": False},
    "collocation": {"interior": 100, "boundary": 1, "data": 0, "grad": None,
                    "strategy": "uniform-random", "resample_every": 0},
    "weights": {"w_f": 1.0, "w_b": 1.0, "w_i": 1.0, "w_g": []},
    "sa": {"lr": 1.0, "init": 1.0},
    "xpinn": {"cuts": [], "interface_points": 1, "interface_weight": 20.0, "interface_mode": "xpinn",
              "mode_inner": "vanilla", "subdomains": []},
    "data_parallel": {"replicas": 1, "pad": False, "mode": "vanilla"},
    "graph": {},
    "eval": {"grid": None},
    "output": {"record_wall_time": False, "checkpoints": True},
}

GRAPH_DEFAULTS = {
    "diffusion": {"alpha": 0.1, "steps": 10},
    "flux": {"coeff": 0.5, "pairs": 8, "hidden": [20, 20], "lr": 1e-2, "lr_final": 1e-4, "model": "mlp"},
    "stencil": {"nodes": 12, "h": 0.5, "shared": False},
}


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("problem_params", "graph"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _num(cfg: dict, path: str, lo: float | None = None, integer: bool = False, strict: bool = False,
         allow_none: bool = False):
    node, keys = cfg, path.split(".")
    for k in keys[:-1]:
        node = node[k]
    v = node.get(keys[-1])
    if v is None and allow_none:
        return
    ok_type = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok_type:
        raise ConfigError(path, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(path, f"must be {'>' if strict else '>='} {lo}, got {v!r}")


def _enum(value, path: str, choices):
    if value not in choices:
        raise ConfigError(path, f"unknown value {value!r} (expected one of {list(choices)})")


def validate(raw: dict) -> dict:
    """Parse, default and cross-check a config mapping; raises ``ConfigError``."""
    if not isinstance(raw, dict):
        raise ConfigError("config", "top level must be a JSON object")
    schema = raw.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise ConfigError("schema", f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    for key in ("mode", "seed"):
        if key not in raw:
            raise ConfigError(key, "missing required field")
    unknown = set(raw) - set(DEFAULTS) - {"mode", "seed", "problem", "sweep"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    cfg = _merge(DEFAULTS, raw)
    _enum(cfg["mode"], "mode", MODES)
    _num(cfg, "seed", 0, integer=True)
    _num(cfg, "epochs", 0, integer=True)
    _num(cfg, "lr", 0, strict=True)

    if cfg["mode"] == "graph":
        _validate_graph(cfg)
        return cfg

    if "problem" not in raw:
        raise ConfigError("problem", "missing required field")
    _enum(cfg["problem"], "problem", sorted(REGISTRY))
    if not isinstance(cfg["problem_params"], dict):
        raise ConfigError("problem_params", "expected an object")
    try:
        spec = get_problem(cfg["problem"], **cfg["problem_params"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("problem_params", str(exc)) from None

    net = cfg["network"]
    if not isinstance(net["hidden"], list) or not net["hidden"] or \
            any(isinstance(h, bool) or not isinstance(h, int) or h < 1 for h in net["hidden"]):
        raise ConfigError("network.hidden", "expected a non-empty list of positive integers")
    _enum(net["activation"], "network.activation", sorted(ACTIVATIONS))
    if not isinstance(net["adaptive"], bool):
        raise ConfigError("network.adaptive", "expected true or false")

    col = cfg["collocation"]
    _num(cfg, "collocation.interior", 0, integer=True)
    if isinstance(col["boundary"], dict):
        names = {bc.name for bc in spec.boundary}
        for k, v in col["boundary"].items():
            _enum(k, "collocation.boundary", sorted(names))
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"collocation.boundary.{k}", f"expected a non-negative integer, got {v!r}")
    else:
        _num(cfg, "collocation.boundary", 0, integer=True)
    _num(cfg, "collocation.data", 0, integer=True)
    _num(cfg, "collocation.grad", 1, integer=True, allow_none=True)
    _num(cfg, "collocation.resample_every", 0, integer=True)
    _enum(col["strategy"], "collocation.strategy", STRATEGIES)

    w = cfg["weights"]
    for k in ("w_f", "w_b", "w_i"):
        _num(cfg, f"weights.{k}", 0)
    if isinstance(w["w_g"], (int, float)) and not isinstance(w["w_g"], bool):
        w["w_g"] = [float(w["w_g"])]
    if not isinstance(w["w_g"], list) or any(isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0
                                             for v in w["w_g"]):
        raise ConfigError("weights.w_g", "expected a non-negative number or list of numbers")
    if len(w["w_g"]) not in (0, 1, spec.dim):
        raise ConfigError("weights.w_g", f"expected 1 or {spec.dim} values, got {len(w['w_g'])}")
    _num(cfg, "sa.lr", 0, strict=True)
    _num(cfg, "sa.init", 0, strict=True)
    _num(cfg, "eval.grid", 2, integer=True, allow_none=True)

    mode = cfg["mode"]
    inner = {"xpinn": cfg["xpinn"]["mode_inner"], "data_parallel": cfg["data_parallel"]["mode"]}.get(mode, mode)
    grad_mode = inner == "gpinn"
    if grad_mode and spec.max_deriv_order + 1 > 3:
        raise ConfigError("mode", f"gpinn needs a residual of order <= 2; '{spec.name}' has order "
                                  f"{spec.max_deriv_order}")
    if inner == "gpinn" and not any(v > 0 for v in w["w_g"]):
        raise ConfigError("weights.w_g", "gpinn mode needs a positive gradient weight")
    if mode == "sa" and col["resample_every"]:
        raise ConfigError("collocation.resample_every", "self-adaptive weights are tied to fixed points")
    if col["interior"] == 0 and w["w_f"] > 0:
        raise ConfigError("collocation.interior", "residual points required when weights.w_f > 0")

    if mode == "xpinn":
        _validate_xpinn(cfg, spec)
    if mode == "data_parallel":
        dp = cfg["data_parallel"]
        _num(cfg, "data_parallel.replicas", 1, integer=True)
        if not isinstance(dp["pad"], bool):
            raise ConfigError("data_parallel.pad", "expected true or false")
        _enum(dp["mode"], "data_parallel.mode", ("vanilla", "gpinn"))
        if col["resample_every"]:
            raise ConfigError("collocation.resample_every", "not supported in data_parallel mode")
    if "sweep" in cfg:
        _validate_sweep(cfg)
    return cfg


def _validate_xpinn(cfg: dict, spec) -> None:
    x = cfg["xpinn"]
    if not isinstance(x["cuts"], list):
        raise ConfigError("xpinn.cuts", "expected a list of [axis, value] pairs")
    for k, c in enumerate(x["cuts"]):
        if not (isinstance(c, list) and len(c) == 2 and isinstance(c[0], int) and isinstance(c[1], (int, float))):
            raise ConfigError(f"xpinn.cuts[{k}]", f"expected [axis, value], got {c!r}")
        if not 0 <= c[0] < spec.dim:
            raise ConfigError(f"xpinn.cuts[{k}]", f"axis {c[0]} outside a {spec.dim}D domain")
        if not spec.domain.lo[c[0]] < c[1] < spec.domain.hi[c[0]]:
            raise ConfigError(f"xpinn.cuts[{k}]", f"cut {c[1]} does not lie inside the domain")
    _num(cfg, "xpinn.interface_points", 1, integer=True)
    _num(cfg, "xpinn.interface_weight", 0)
    _enum(x["interface_mode"], "xpinn.interface_mode", ("xpinn", "cpinn"))
    _enum(x["mode_inner"], "xpinn.mode_inner", ("vanilla", "sa", "gpinn"))
    if x["interface_mode"] == "cpinn" and spec.flux is None:
        raise ConfigError("xpinn.interface_mode", f"problem '{spec.name}' defines no flux")
    n_sub = 1
    for axis in range(spec.dim):
        n_sub *= 1 + sum(1 for c in x["cuts"] if c[0] == axis)
    subs = x["subdomains"]
    if not isinstance(subs, list) or (subs and len(subs) != n_sub):
        raise ConfigError("xpinn.subdomains", f"expected {n_sub} entries (one per subdomain) or none")
    allowed = {"interior", "boundary", "data", "grad", "lr", "activation", "adaptive"}
    for k, s in enumerate(subs):
        if not isinstance(s, dict):
            raise ConfigError(f"xpinn.subdomains[{k}]", "expected an object")
        for key in s:
            if key not in allowed:
                raise ConfigError(f"xpinn.subdomains[{k}].{key}", "unknown field")
        if "activation" in s:
            _enum(s["activation"], f"xpinn.subdomains[{k}].activation", sorted(ACTIVATIONS))
        for key in ("interior", "data"):
            if key in s and (isinstance(s[key], bool) or not isinstance(s[key], int) or s[key] < 0):
                raise ConfigError(f"xpinn.subdomains[{k}].{key}", "expected a non-negative integer")
        if "lr" in s and (not isinstance(s["lr"], (int, float)) or s["lr"] <= 0):
            raise ConfigError(f"xpinn.subdomains[{k}].lr", "must be > 0")


def _validate_graph(cfg: dict) -> None:
    g = cfg["graph"]
    if not isinstance(g, dict) or "task" not in g:
        raise ConfigError("graph.task", "missing required field")
    _enum(g["task"], "graph.task", GRAPH_TASKS)
    merged = {**GRAPH_DEFAULTS[g["task"]], **g}
    src = merged.get("edges")
    if g["task"] != "stencil":
        if src is None:
            merged.setdefault("random", {"n": 10, "p": 0.3})
            r = merged["random"]
            if not isinstance(r, dict) or not isinstance(r.get("n"), int) or r["n"] < 2:
                raise ConfigError("graph.random.n", "expected an integer >= 2")
            if not isinstance(r.get("p", 0.3), (int, float)) or not 0 <= r.get("p", 0.3) <= 1:
                raise ConfigError("graph.random.p", "expected a probability")
        elif not isinstance(src, str):
            raise ConfigError("graph.edges", "expected a path to an edge-list file")
    if g["task"] == "flux":
        _enum(merged["model"], "graph.model", ("mlp", "polynomial"))
    if g["task"] == "diffusion" and (not isinstance(merged["alpha"], (int, float)) or merged["alpha"] < 0):
        raise ConfigError("graph.alpha", "must be >= 0")
    cfg["graph"] = merged


def _validate_sweep(cfg: dict) -> None:
    grid = cfg["sweep"].get("grid") if isinstance(cfg["sweep"], dict) else None
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("sweep.grid", "expected a non-empty object of parameter lists")
    for k, v in grid.items():
        if not isinstance(v, list) or not v:
            raise ConfigError(f"sweep.grid.{k}", "expected a non-empty list of values")


def load(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return validate(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Copy of ``cfg`` with ``a.b.c`` replaced by ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out
