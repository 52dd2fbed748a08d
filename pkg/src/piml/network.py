"""Feed-forward networks, Adam, and plain gradient ascent."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Jet, Tensor, closure, parameter
from .autodiff.jet import ACTIVATIONS

CHECKPOINT_SCHEMA = "piml.mlp/1"


@dataclass
class MLP:
    """Dense network; hidden layers use ``activations``, the last layer is linear.

    With ``slopes`` set, hidden layer ``l`` computes ``act(slopes[l] * z)`` with a
    trainable scalar slope (initialised to 1).
    """

    layer_sizes: list[int]
    activations: list[str]
    weights: list[Tensor]
    biases: list[Tensor]
    slopes: list[Tensor] | None = None

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        if self.slopes is not None:
            params.extend(self.slopes)
        return params

    def copy(self) -> "MLP":
        return MLP(
            list(self.layer_sizes),
            list(self.activations),
            [parameter(w.data.copy()) for w in self.weights],
            [parameter(b.data.copy()) for b in self.biases],
            None if self.slopes is None else [parameter(a.data.copy()) for a in self.slopes],
        )

    def __call__(self, x):
        return mlp_forward(self, x)


def init_mlp(layer_sizes: Sequence[int], activation="tanh", seed: int = 0,
             adaptive: bool = False) -> MLP:
    """Xavier-uniform weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("an MLP needs at least an input and an output layer")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    n_hidden = len(sizes) - 2
    acts = [activation] * n_hidden if isinstance(activation, str) else list(activation)
    if len(acts) != n_hidden:
        raise ValueError(f"need {n_hidden} activation tags, got {len(acts)}")
    for a in acts:
        if a not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{a}' (expected one of {sorted(ACTIVATIONS)})")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(parameter(np.zeros((1, fan_out))))
    slopes = [parameter(np.ones((1, 1))) for _ in range(n_hidden)] if adaptive else None
    return MLP(sizes, acts, weights, biases, slopes)


def mlp_forward(net: MLP, x):
    """Evaluate on a (batch, in_dim) array/Tensor or on an input Jet."""
    h = x if isinstance(x, (Jet, Tensor)) else Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    width = h.value.shape[-1] if isinstance(h, Jet) else h.shape[-1]
    if width != net.in_dim:
        raise ValueError(f"input width {width} does not match network input {net.in_dim}")
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = h @ w + b
        if l == last:
            return z
        if net.slopes is not None:
            z = z * net.slopes[l]
        h = ACTIVATIONS[net.activations[l]](z)
    return h


def input_jet(net: MLP, x, keys) -> Jet:
    """Network output as a jet carrying the input derivatives in ``keys``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return mlp_forward(net, Jet.inputs(x, closure(keys)))


def input_derivative(net: MLP, x, index: Sequence[int]) -> float:
    """Exact partial derivative of a scalar-output network at one point."""
    index = tuple(sorted(int(i) for i in index))
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    out = input_jet(net, x, [index])
    return float(out[index].data.reshape(-1)[0])


# optimisers ---------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState,
              lr: float | None = None):
    """Bias-corrected Adam update; parameters are rebound to new arrays."""
    if len(params) != len(grads):
        raise ValueError("parameter and gradient counts differ")
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if np.shape(g) != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch: parameter {p.shape}, gradient {np.shape(g)}")
    lr = state.lr if lr is None else lr
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        state.m[i], state.v[i] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def ascent_step(weights, grads, eta: float):
    """Plain gradient ascent ``weights + eta * grads``."""
    if eta <= 0:
        raise ValueError("ascent rate must be positive")
    w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if w.shape != g.shape:
        raise ValueError(f"shape mismatch: weights {w.shape}, gradients {g.shape}")
    return w + eta * g


# checkpoints --------------------------------------------------------------------

def to_dict(net: MLP) -> dict:
    return {
        "schema": CHECKPOINT_SCHEMA,
        "layer_sizes": list(net.layer_sizes),
        "activations": list(net.activations),
        "weights": [w.data.reshape(-1).tolist() for w in net.weights],
        "biases": [b.data.reshape(-1).tolist() for b in net.biases],
        "slopes": None if net.slopes is None else [float(a.data.reshape(-1)[0]) for a in net.slopes],
    }


def from_dict(d: dict) -> MLP:
    if d.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {d.get('schema')!r}")
    sizes = d["layer_sizes"]
    weights = [parameter(np.array(w).reshape(i, o)) for w, i, o in zip(d["weights"], sizes[:-1], sizes[1:])]
    biases = [parameter(np.array(b).reshape(1, o)) for b, o in zip(d["biases"], sizes[1:])]
    slopes = None if d.get("slopes") is None else [parameter(np.full((1, 1), a)) for a in d["slopes"]]
    return MLP(list(sizes), list(d["activations"]), weights, biases, slopes)


def save_checkpoint(net: MLP, path) -> None:
    Path(path).write_text(json.dumps(to_dict(net)))


def load_checkpoint(path) -> MLP:
    return from_dict(json.loads(Path(path).read_text()))


def parameter_checksum(net: MLP) -> str:
    h = hashlib.sha256()
    for p in net.parameters():
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()
