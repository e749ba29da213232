"""Adam with decoupled weight decay and a linear warmup / linear decay schedule."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class OptimizerConfig:
    peak_lr: float = 1e-3
    warmup_steps: int = 50
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    grad_clip_norm: Optional[float] = 1.0

    def __post_init__(self):
        if self.peak_lr < 0:
            raise ValueError("peak_lr must be >= 0")
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps ({self.warmup_steps}) <= total_steps ({self.total_steps})")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.grad_clip_norm is not None and self.grad_clip_norm <= 0:
            raise ValueError("grad_clip_norm must be positive or None")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def learning_rate(config: OptimizerConfig, step: int) -> float:
    """peak * min(step / warmup, (total - step) / (total - warmup)), clamped at 0."""
    warm, total = config.warmup_steps, config.total_steps
    up = step / warm if warm > 0 else 1.0
    down = (total - step) / (total - warm) if total > warm else (1.0 if step < total else 0.0)
    return config.peak_lr * max(0.0, min(up, down, 1.0))


class Adam:
    """First/second moment state keyed by parameter name."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.t = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Tensor], lr: float, decayed: Mapping[str, bool]) -> float:
        """Apply one update from ``param.grad``; returns the pre-clip gradient norm."""
        cfg = self.config
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        clip = 1.0
        if cfg.grad_clip_norm is not None and norm > cfg.grad_clip_norm:
            clip = cfg.grad_clip_norm / norm
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for name, p in params.items():
            g = grads[name] * clip
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            if decayed.get(name, False) and cfg.weight_decay:
                update = update + cfg.weight_decay * p.data
            p.data -= lr * update
        return norm

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, t: int, arrays: Mapping[str, np.ndarray]) -> None:
        self.t = t
        self.m = {k[len("adam.m."):]: np.array(a) for k, a in arrays.items() if k.startswith("adam.m.")}
        self.v = {k[len("adam.v."):]: np.array(a) for k, a in arrays.items() if k.startswith("adam.v.")}
