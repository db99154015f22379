"""Small tanh MLP with manual backprop, Adam, and categorical sampling.

The actor-critic networks are one shared trunk with per-head linear
outputs. Forward/backward operate on single feature vectors or on batches
(first axis); all math is float64 numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

CATEGORICAL = "categorical_logits"
SCALAR = "scalar"


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden: tuple[int, ...]
    heads: tuple[tuple[str, int, str], ...]
    activation: str = "tanh"

    def __post_init__(self):
        if len(self.hidden) < 1 or any(w < 1 for w in self.hidden):
            raise ValueError("need at least one hidden layer of width >= 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for name, dim, kind in self.heads:
            if kind not in (CATEGORICAL, SCALAR):
                raise ValueError(f"unknown head kind {kind!r} for {name!r}")
            if kind == SCALAR and dim != 1:
                raise ValueError(f"scalar head {name!r} must have dim 1")


class PolicyParams:
    """Trunk and head weights; also exposes a flat view for the optimizer."""

    def __init__(self, trunk, heads, scalar_heads=frozenset()):
        self.trunk = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                      for w, b in trunk]
        self.heads = {k: (np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64))
                      for k, (w, b) in heads.items()}
        self.scalar_heads = frozenset(scalar_heads)

    def _arrays(self):
        for w, b in self.trunk:
            yield w
            yield b
        for name in sorted(self.heads):
            w, b = self.heads[name]
            yield w
            yield b

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self._arrays())

    def to_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self._arrays()])

    def from_flat(self, flat: np.ndarray) -> "PolicyParams":
        """New PolicyParams with this one's shapes filled from `flat`."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ValueError(f"expected {self.num_params} values, got {flat.size}")
        out_trunk, out_heads = [], {}
        pos = 0

        def take(like):
            nonlocal pos
            chunk = flat[pos : pos + like.size].reshape(like.shape).copy()
            pos += like.size
            return chunk

        for w, b in self.trunk:
            out_trunk.append((take(w), take(b)))
        for name in sorted(self.heads):
            w, b = self.heads[name]
            out_heads[name] = (take(w), take(b))
        return PolicyParams(out_trunk, out_heads, self.scalar_heads)

    def copy(self) -> "PolicyParams":
        return self.from_flat(self.to_flat())


def init_params(spec: MlpSpec, seed: int) -> PolicyParams:
    """Fan-in scaled uniform init; gain sqrt(2) on the trunk, 0.01 on
    categorical heads (near-uniform initial policy), 1.0 on scalar heads."""
    rng = np.random.default_rng(seed)

    def layer(fan_in, fan_out, gain):
        bound = gain * np.sqrt(3.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        return w, np.zeros(fan_out)

    trunk = []
    d = spec.input_dim
    for width in spec.hidden:
        trunk.append(layer(d, width, np.sqrt(2.0)))
        d = width
    heads = {}
    for name, dim, kind in spec.heads:
        gain = 0.01 if kind == CATEGORICAL else 1.0
        heads[name] = layer(d, dim, gain)
    scalar_heads = {name for name, _, kind in spec.heads if kind == SCALAR}
    return PolicyParams(trunk, heads, scalar_heads)


def _forward_cached(params: PolicyParams, x: np.ndarray):
    h = x
    hiddens = []
    for w, b in params.trunk:
        h = np.tanh(h @ w + b)
        hiddens.append(h)
    outs = {name: h @ w + b for name, (w, b) in params.heads.items()}
    return outs, hiddens


def forward(params: PolicyParams, features: np.ndarray) -> dict[str, np.ndarray]:
    """Head outputs for one feature vector or a batch (first axis).

    Categorical heads return raw logits; scalar heads return shape () or (B,).
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.trunk[0][0].shape[0]:
        raise ValueError(
            f"feature dim {x.shape[1]} != input dim {params.trunk[0][0].shape[0]}"
        )
    outs, _ = _forward_cached(params, x)
    result = {}
    for name, out in outs.items():
        if name in params.scalar_heads:
            out = out[:, 0]
        result[name] = out[0] if single else out
    return result


def backward(
    params: PolicyParams, features: np.ndarray, head_grads: dict[str, np.ndarray]
) -> PolicyParams:
    """Exact gradients of sum_heads <head_grads, outputs> w.r.t. all parameters.

    head_grads values are shaped like the corresponding forward outputs
    ((B, dim) for categorical, (B,) or scalar for scalar heads).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    _, hiddens = _forward_cached(params, x)
    h_last = hiddens[-1]
    b_size = x.shape[0]

    grad_heads = {}
    dh = np.zeros_like(h_last)
    for name, (w, b) in params.heads.items():
        if name not in head_grads:
            g = np.zeros((b_size, w.shape[1]))
        else:
            g = np.asarray(head_grads[name], dtype=np.float64)
            if name in params.scalar_heads:
                g = np.broadcast_to(np.atleast_1d(g), (b_size,)).reshape(b_size, 1)
            elif g.ndim == 1:
                g = g[None, :]
        if g.shape != (b_size, w.shape[1]):
            raise ValueError(f"head grad {name!r} has shape {g.shape}")
        grad_heads[name] = (h_last.T @ g, g.sum(axis=0))
        dh = dh + g @ w.T

    grad_trunk = [None] * len(params.trunk)
    for li in range(len(params.trunk) - 1, -1, -1):
        w, b = params.trunk[li]
        h = hiddens[li]
        h_prev = hiddens[li - 1] if li > 0 else x
        dz = dh * (1.0 - h * h)
        grad_trunk[li] = (h_prev.T @ dz, dz.sum(axis=0))
        dh = dz @ w.T
    return PolicyParams(grad_trunk, grad_heads, params.scalar_heads)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8

    @classmethod
    def fresh(cls, num_params: int, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros(num_params), v=np.zeros(num_params),
                   learning_rate=learning_rate, **kw)


def adam_step(
    state: AdamState, params_flat: np.ndarray, grads_flat: np.ndarray, maximize: bool = False
) -> np.ndarray:
    """One Adam update; mutates `state`, returns the new flat parameters.

    `maximize` ascends instead of descending. Non-finite gradients abort.
    """
    g = np.asarray(grads_flat, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient in adam_step")
    if maximize:
        g = -g
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    return params_flat - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_stability)


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted log-softmax; safe for logits up to ~1e300."""
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def categorical_sample(logits: np.ndarray, rng: np.random.Generator) -> tuple[int, float]:
    """Draw an index from softmax(logits); returns (index, log-probability)."""
    logp = log_softmax(logits)
    probs = np.exp(logp)
    idx = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    idx = min(idx, len(probs) - 1)
    return idx, float(logp[idx])


def save_checkpoint(path, spec: MlpSpec, params: PolicyParams, seed: int, step: int) -> None:
    """JSON header line then flat float64 parameters, little-endian row-major."""
    flat = params.to_flat()
    header = {
        "input_dim": spec.input_dim,
        "hidden": list(spec.hidden),
        "activation": spec.activation,
        "heads": [list(h) for h in spec.heads],
        "seed": seed,
        "step": step,
        "num_params": int(flat.size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[MlpSpec, PolicyParams, int, int]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    spec = MlpSpec(
        input_dim=header["input_dim"],
        hidden=tuple(header["hidden"]),
        heads=tuple(tuple(h) for h in header["heads"]),
        activation=header["activation"],
    )
    flat = np.frombuffer(raw, dtype="<f8")
    if flat.size != header["num_params"]:
        raise ValueError("checkpoint truncated")
    params = init_params(spec, 0).from_flat(flat)
    return spec, params, header["seed"], header["step"]
