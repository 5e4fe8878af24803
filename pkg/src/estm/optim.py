"""Adam with decoupled weight decay, plus gradient clipping."""

from __future__ import annotations

import numpy as np

from .config import TrainConfig
from .params import ParamStore


def clip_global_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm."""
    total = 0.0
    for _, t in store.items():
        if t.grad is not None:
            total += float(np.sum(t.grad.astype(np.float64) ** 2))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, t in store.items():
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


class AdamW:
    """Decoupled weight decay: the decay term multiplies lr but never enters
    the moment estimates."""

    def __init__(self, store: ParamStore, cfg: TrainConfig):
        self.store = store
        self.lr = cfg.learning_rate
        self.beta1 = cfg.beta1
        self.beta2 = cfg.beta2
        self.eps = cfg.eps
        self.weight_decay = cfg.weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        self.store.fill_missing_grads()
        self.store.check_finite_grads()
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, t in self.store.items():
            g = t.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            t.data = t.data - self.lr * (update + self.weight_decay * t.data)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {"step": np.asarray(float(self.step_count))}
        for name in self.store.names():
            out[f"m/{name}"] = self.m[name].copy()
            out[f"v/{name}"] = self.v[name].copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.step_count = int(np.asarray(state["step"]))
        dtype = self.store.dtype
        for name in self.store.names():
            self.m[name] = np.ascontiguousarray(state[f"m/{name}"], dtype=dtype)
            self.v[name] = np.ascontiguousarray(state[f"v/{name}"], dtype=dtype)
