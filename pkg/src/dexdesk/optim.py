"""AdamW on flat parameter vectors, with linear warmup and cosine decay."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

# Full-scale training recipe constants.
BASE_LR = 3e-4
WEIGHT_DECAY = 1e-6
WARMUP_STEPS = 2000
FULL_SCALE_EPOCHS = 120


@dataclass
class AdamWConfig:
    lr: float = BASE_LR
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = WEIGHT_DECAY
    warmup_steps: int = WARMUP_STEPS
    total_steps: int = 100_000  # cosine horizon


def lr_at(step: int, cfg: AdamWConfig) -> float:
    """Effective learning rate: linear warmup from 0, cosine decay to 0."""
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    horizon = max(cfg.total_steps - cfg.warmup_steps, 1)
    progress = min((step - cfg.warmup_steps) / horizon, 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    cfg: AdamWConfig = field(default_factory=AdamWConfig)

    @staticmethod
    def init(n_params: int, cfg: AdamWConfig | None = None) -> "OptimState":
        return OptimState(np.zeros(n_params), np.zeros(n_params), 0, cfg or AdamWConfig())


def opt_step(params: np.ndarray, grads: np.ndarray, state: OptimState) -> tuple[np.ndarray, OptimState]:
    """One AdamW update. Mutates and returns ``params`` and ``state``.

    Decoupled weight decay: params *= (1 - lr_t * wd) before the moment
    update is applied, with lr_t the scheduled effective rate at the current
    step counter (counted from 0, so the very first update is a warmup no-op).
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ContractViolation("params, grads, and moments must share one shape")
    cfg = state.cfg
    lr_t = lr_at(state.step, cfg)
    b1, b2 = cfg.betas

    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * grads * grads
    state.step += 1
    mhat = state.m / (1 - b1 ** state.step)
    vhat = state.v / (1 - b2 ** state.step)

    if cfg.weight_decay:
        params *= 1.0 - lr_t * cfg.weight_decay
    params -= lr_t * mhat / (np.sqrt(vhat) + cfg.eps)
    return params, state
