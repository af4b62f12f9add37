"""Parameter store, AdamW with decoupled weight decay, cosine learning-rate
schedule, and the binary checkpoint format.

Checkpoints are a single file: one JSON manifest line (metadata, tensor names
and shapes, in order) followed by each tensor's little-endian float64 payload.
Given identical seeds the whole training stack reproduces these files
bit-for-bit, which the determinism tests assert.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["ParamStore", "OptimizerState", "adamw_step", "cosine_lr", "save_checkpoint", "load_checkpoint"]

_MAGIC = "turboeq-checkpoint-v1"


class ParamStore:
    """Ordered, named collection of trainable tensors plus a JSON-able metadata header."""

    def __init__(self, meta: dict | None = None):
        self.meta = dict(meta or {})
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(values, dtype=np.float64))
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())


@dataclass
class OptimizerState:
    """AdamW moments and step count, shaped like the parameters they track."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: ParamStore, state: OptimizerState, lr: float, grads: dict | None = None) -> None:
    """One AdamW update, by default from the gradients stored on the parameters.

    Weight decay is decoupled (applied directly to the weights, scaled by the
    learning rate); moment estimates are bias-corrected.  Parameters with no
    gradient this step are only decayed.
    """
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name) if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p.data -= lr * state.weight_decay * p.data
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def cosine_lr(step: int, total_steps: int, peak: float, warmup: int) -> float:
    """Linear warmup to ``peak`` over ``warmup`` steps, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if warmup > 0 and step < warmup:
        return peak * step / warmup
    span = max(total_steps - warmup, 1)
    frac = (step - warmup) / span
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


def save_checkpoint(path, params: ParamStore) -> None:
    manifest = {
        "format": _MAGIC,
        "meta": params.meta,
        "tensors": [{"name": n, "shape": list(t.data.shape)} for n, t in params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(manifest, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for _, t in params.items():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as fh:
        header = fh.readline()
        manifest = json.loads(header.decode("utf-8"))
        if manifest.get("format") != _MAGIC:
            raise ValueError(f"{path} is not a turboeq checkpoint")
        store = ParamStore(meta=manifest["meta"])
        for entry in manifest["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"checkpoint truncated while reading {entry['name']!r}")
            store.add(entry["name"], np.frombuffer(buf, dtype="<f8").reshape(shape).copy())
    return store
