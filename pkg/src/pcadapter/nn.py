"""Dense parameters, the pointwise encoder, softmax cross-entropy and Adam.

Every layer has an explicit ``*_backward`` next to its forward; caches are
plain tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GROUPS = ("encoder", "shape_adapter", "locality_adapter", "classifier")
CHECKPOINT_VERSION = 1


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class Param:
    values: np.ndarray
    group: str
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.group not in GROUPS:
            raise ValueError(f"unknown parameter group {self.group!r}")
        self.values = np.asarray(self.values, dtype=np.float64)
        self.grad = np.zeros_like(self.values)

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# -- encoder: 3 -> H (ReLU) -> D, applied to each point ---------------------

def encoder_forward(points, w1, b1, w2, b2):
    pre = points @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2 + b2, (points, pre, hidden, w2)


def encoder_backward(dfeat, cache):
    points, pre, hidden, w2 = cache
    dw2 = hidden.T @ dfeat
    db2 = dfeat.sum(axis=0)
    dpre = (dfeat @ w2.T) * (pre > 0)
    dw1 = points.T @ dpre
    db1 = dpre.sum(axis=0)
    return dw1, db1, dw2, db2


# -- classifier ------------------------------------------------------------

def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def classify(pooled, w, b):
    """Probability vector(s) for pooled feature(s)."""
    return softmax(pooled @ w + b)


def cross_entropy(probs, label: int):
    """Loss and gradient with respect to the logits that produced ``probs``."""
    p = float(probs[label])
    loss = -math.log(p) if p > 0 else math.inf
    dlogits = np.array(probs, dtype=np.float64)
    dlogits[label] -= 1.0
    return loss, dlogits


# -- optimization ----------------------------------------------------------

def cosine_anneal(base_lr: float, epoch: int, total_epochs: int) -> float:
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class Adam:
    """Adam with L2 weight decay folded into the gradient and per-group lr scaling."""

    def __init__(self, params: dict[str, Param], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.t = {k: 0 for k in params}

    def step(self, lr: float, group_scale: dict[str, float] | None = None, names=None):
        """Update ``names`` (default: all params). Raises on non-finite gradients."""
        group_scale = group_scale or {}
        names = list(self.params) if names is None else list(names)
        for k in names:
            if not np.all(np.isfinite(self.params[k].grad)):
                raise NonFiniteGradientError(f"non-finite gradient in parameter {k!r}")
        b1, b2 = self.betas
        for k in names:
            p = self.params[k]
            g = p.grad + self.weight_decay * p.values if self.weight_decay else p.grad
            self.t[k] += 1
            t = self.t[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1 ** t)
            v_hat = self.v[k] / (1 - b2 ** t)
            p.values -= lr * group_scale.get(p.group, 1.0) * m_hat / (np.sqrt(v_hat) + self.eps)


# -- checkpointing ---------------------------------------------------------

def save_checkpoint(path: str | Path, params: dict[str, Param], opt: Adam | None,
                    epoch: int, meta: str = "") -> None:
    arrays = {"__version__": np.array(CHECKPOINT_VERSION), "__epoch__": np.array(epoch),
              "__meta__": np.array(meta)}
    for k, p in params.items():
        arrays[f"value/{k}"] = p.values
        arrays[f"group/{k}"] = np.array(p.group)
        if opt is not None:
            arrays[f"adam_m/{k}"] = opt.m[k]
            arrays[f"adam_v/{k}"] = opt.v[k]
            arrays[f"adam_t/{k}"] = np.array(opt.t[k])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path):
    """Return ``(params, adam_state, epoch, meta)``; adam_state is None if absent."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        names = [k.split("/", 1)[1] for k in data.files if k.startswith("value/")]
        params = {k: Param(data[f"value/{k}"].copy(), str(data[f"group/{k}"])) for k in names}
        state = None
        if all(f"adam_m/{k}" in data.files for k in names):
            state = {
                "m": {k: data[f"adam_m/{k}"].copy() for k in names},
                "v": {k: data[f"adam_v/{k}"].copy() for k in names},
                "t": {k: int(data[f"adam_t/{k}"]) for k in names},
            }
        return params, state, int(data["__epoch__"]), str(data["__meta__"])
