"""Small dense-network engine in float64 numpy.

Parameters of a network live in one flat vector; per-layer weight matrices
and bias vectors are reshaped views into it, so optimizers and target-network
updates operate on the flat vector directly.

Inputs are row-major batches: ``x`` has shape ``(batch, n_in)`` or ``(n_in,)``.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DenseNetworkSpec",
    "ParameterSet",
    "ForwardCache",
    "AdamState",
    "init_params",
    "forward",
    "gradient",
    "adam_step",
    "soft_update",
    "finite_difference_check",
    "GradientCheckReport",
    "save_checkpoint",
    "load_checkpoint",
]

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass(frozen=True)
class DenseNetworkSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"need >= 2 layers of size >= 1, got {self.layer_sizes}")
        for act in (self.hidden_activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    @property
    def shapes(self) -> list[tuple[tuple[int, int], int]]:
        sizes = self.layer_sizes
        return [((sizes[i], sizes[i + 1]), sizes[i + 1]) for i in range(len(sizes) - 1)]

    @property
    def n_params(self) -> int:
        return sum(a * b + c for (a, b), c in self.shapes)

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes),
                "hidden_activation": self.hidden_activation,
                "output_activation": self.output_activation}


class ParameterSet:
    """Weights ``(n_in, n_out)`` and biases ``(n_out,)`` viewing one flat buffer."""

    def __init__(self, spec: DenseNetworkSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({spec.n_params},)")
        self.flat = np.ascontiguousarray(flat)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for (n_in, n_out), n_b in spec.shapes:
            self.weights.append(self.flat[offset:offset + n_in * n_out].reshape(n_in, n_out))
            offset += n_in * n_out
            self.biases.append(self.flat[offset:offset + n_b])
            offset += n_b

    def copy(self) -> "ParameterSet":
        return ParameterSet(self.spec, self.flat.copy())


def init_params(spec: DenseNetworkSpec, rng: np.random.Generator,
                final_scale: float = 1.0) -> ParameterSet:
    """Uniform(+-1/sqrt(fan_in)) init; the last layer is further scaled by ``final_scale``."""
    params = ParameterSet(spec)
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        bound = 1.0 / np.sqrt(w.shape[0])
        scale = final_scale if i == n_layers - 1 else 1.0
        w[...] = rng.uniform(-bound, bound, size=w.shape) * scale
        b[...] = rng.uniform(-bound, bound, size=b.shape) * scale
    return params


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray | None:
    if name == "relu":
        return (z > 0.0).astype(np.float64)   # subgradient 0 at z == 0
    if name == "tanh":
        return 1.0 - a * a
    return None


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)       # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)          # pre-activations
    post: list[np.ndarray] = field(default_factory=list)         # activations
    squeeze: bool = False


def forward(params: ParameterSet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    spec = params.spec
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[-1] != spec.layer_sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != {spec.layer_sizes[0]}")
    cache = ForwardCache(squeeze=squeeze)
    a = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w + b
        a = _activate(spec.output_activation if i == last else spec.hidden_activation, z)
        cache.pre.append(z)
        cache.post.append(a)
    return (a[0] if squeeze else a), cache


def gradient(params: ParameterSet, cache: ForwardCache | None, upstream: np.ndarray,
             input_grad: bool = True, pre_upstream: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Reverse pass.  Returns ``(d loss / d flat params, d loss / d input)``.

    ``upstream`` is d loss / d output with the output's shape; batch
    contributions are summed, so fold any averaging into ``upstream``.
    With ``input_grad=False`` the input gradient is skipped and ``None``.
    ``pre_upstream`` is an extra gradient on the final pre-activation (for
    penalties that act before the output squashing).
    """
    if cache is None or not cache.pre:
        raise ValueError("gradient() needs the cache from a forward() call")
    spec = params.spec
    delta = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        delta = delta[None, :]
    if delta.shape != cache.post[-1].shape:
        raise ValueError(f"upstream shape {delta.shape} != output shape {cache.post[-1].shape}")
    grad = np.empty(spec.n_params)
    views = ParameterSet(spec, grad)
    last = len(params.weights) - 1
    for i in range(last, -1, -1):
        act = spec.output_activation if i == last else spec.hidden_activation
        d_act = _activation_grad(act, cache.pre[i], cache.post[i])
        if d_act is not None:
            delta = delta * d_act
        if i == last and pre_upstream is not None:
            delta = delta + (pre_upstream[None, :] if cache.squeeze else pre_upstream)
        np.matmul(cache.inputs[i].T, delta, out=views.weights[i])
        np.sum(delta, axis=0, out=views.biases[i])
        if i > 0 or input_grad:
            delta = delta @ params.weights[i].T
    if not input_grad:
        return views.flat, None
    return views.flat, (delta[0] if cache.squeeze else delta)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "AdamState":
        return cls(m=np.zeros_like(params.flat), v=np.zeros_like(params.flat))


def adam_step(params: ParameterSet, state: AdamState, grad: np.ndarray,
              learning_rate: float) -> ParameterSet:
    """Bias-corrected Adam update applied in place; returns ``params``."""
    if grad.shape != params.flat.shape or state.m.shape != params.flat.shape:
        raise ValueError("gradient / moment shapes do not match the parameters")
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grad
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * np.square(grad)
    # theta -= lr * m_hat / (sqrt(v_hat) + eps)
    denom = np.sqrt(state.v)
    denom *= 1.0 / np.sqrt(1.0 - state.beta2 ** state.t)
    denom += state.eps
    np.divide(state.m, denom, out=denom)
    denom *= learning_rate / (1.0 - state.beta1 ** state.t)
    params.flat -= denom
    return params


def soft_update(target: ParameterSet, online: ParameterSet, tau: float) -> ParameterSet:
    """target <- (1 - tau) target + tau online, in place."""
    if target.flat.shape != online.flat.shape:
        raise ValueError("target and online parameter shapes differ")
    if tau == 1.0:
        target.flat[...] = online.flat
    elif tau != 0.0:
        target.flat *= 1.0 - tau
        target.flat += tau * online.flat
    return target


@dataclass
class GradientCheckReport:
    passed: bool
    max_rel_error: float
    tolerance: float


def _rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def finite_difference_check(params: ParameterSet, x: np.ndarray, tolerance: float = 1e-4,
                            h: float = 1e-5, upstream: np.ndarray | None = None,
                            grad_fn=None) -> GradientCheckReport:
    """Compare analytic gradients of ``sum(upstream * f(x))`` with central differences.

    Both parameter and input gradients are checked.  ``grad_fn`` substitutes
    the analytic routine (same signature as :func:`gradient`), which lets the
    check be pointed at a deliberately broken backward pass.
    """
    grad_fn = grad_fn or gradient
    x = np.asarray(x, dtype=np.float64)
    out, cache = forward(params, x)
    if upstream is None:
        upstream = np.ones_like(out)

    def loss(p: ParameterSet, inp: np.ndarray) -> float:
        return float(np.sum(upstream * forward(p, inp)[0]))

    g_params, g_input = grad_fn(params, cache, upstream)

    probe = params.copy()
    num_params = np.empty_like(probe.flat)
    for j in range(probe.flat.size):
        orig = probe.flat[j]
        probe.flat[j] = orig + h
        plus = loss(probe, x)
        probe.flat[j] = orig - h
        minus = loss(probe, x)
        probe.flat[j] = orig
        num_params[j] = (plus - minus) / (2 * h)

    num_input = np.empty_like(x)
    flat_x = num_input.reshape(-1)
    xp = x.copy().reshape(-1)
    for j in range(xp.size):
        orig = xp[j]
        xp[j] = orig + h
        plus = loss(params, xp.reshape(x.shape))
        xp[j] = orig - h
        minus = loss(params, xp.reshape(x.shape))
        xp[j] = orig
        flat_x[j] = (plus - minus) / (2 * h)

    err = max(_rel_error(g_params, num_params), _rel_error(np.asarray(g_input), num_input))
    return GradientCheckReport(passed=err < tolerance, max_rel_error=err, tolerance=tolerance)


def save_checkpoint(path: str | os.PathLike, networks: dict[str, ParameterSet],
                    optimizers: dict[str, AdamState] | None = None,
                    meta: dict | None = None) -> None:
    """Write a JSON checkpoint atomically (temp file + rename).

    Layout::

        {"format": "fairis-checkpoint/1", "meta": {...},
         "networks": {name: {"spec": {...}, "params": [floats]}},
         "optimizers": {name: {"t": int, "beta1": .., "beta2": .., "eps": ..,
                               "m": [floats], "v": [floats]}}}
    """
    doc = {
        "format": "fairis-checkpoint/1",
        "meta": meta or {},
        "networks": {name: {"spec": p.spec.to_dict(), "params": p.flat.tolist()}
                     for name, p in networks.items()},
        "optimizers": {name: {"t": s.t, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
                              "m": s.m.tolist(), "v": s.v.tolist()}
                       for name, s in (optimizers or {}).items()},
    }
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, ParameterSet], dict[str, AdamState], dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "fairis-checkpoint/1":
        raise ValueError(f"{path}: not a fairis checkpoint")
    networks = {}
    for name, entry in doc["networks"].items():
        spec = DenseNetworkSpec(**entry["spec"])
        networks[name] = ParameterSet(spec, np.asarray(entry["params"], dtype=np.float64))
    optimizers = {}
    for name, entry in doc.get("optimizers", {}).items():
        optimizers[name] = AdamState(m=np.asarray(entry["m"], dtype=np.float64),
                                     v=np.asarray(entry["v"], dtype=np.float64),
                                     t=int(entry["t"]), beta1=entry["beta1"],
                                     beta2=entry["beta2"], eps=entry["eps"])
    return networks, optimizers, doc.get("meta", {})
