"""AdamW with decoupled weight decay and the warmup + half-cycle cosine schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamWState:
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)
    step_count: int = 0

    @classmethod
    def for_params(cls, params: list[Tensor]) -> "AdamWState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params], 0)


def adamw_step(params: list[Tensor], state: AdamWState, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.05) -> AdamWState:
    """One AdamW update, in place on ``params`` and ``state``.

    ``p <- p - lr * (wd * p + m_hat / (sqrt(v_hat) + eps))``. Nothing is written
    unless every parameter's update is finite.
    """
    if lr < 0 or not (0 < beta1 < 1) or not (0 < beta2 < 1) or eps <= 0 or weight_decay < 0:
        raise ValueError(f"adamw_step: invalid hyperparameters lr={lr} beta1={beta1} beta2={beta2} "
                         f"eps={eps} weight_decay={weight_decay}")
    if not state.first_moment:
        fresh = AdamWState.for_params(params)
        state.first_moment, state.second_moment = fresh.first_moment, fresh.second_moment
    if len(state.first_moment) != len(params):
        raise ValueError(f"adamw_step: state holds {len(state.first_moment)} buffers for {len(params)} params")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adamw_step: parameter {i} of shape {p.shape} has no gradient")
        if state.first_moment[i].shape != p.shape:
            raise ValueError(f"adamw_step: moment shape {state.first_moment[i].shape} != param shape {p.shape}")

    t = state.step_count + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_m, new_v, new_p = [], [], []
    for i, p in enumerate(params):
        g = p.grad.astype(p.dtype, copy=False)
        m = beta1 * state.first_moment[i] + (1.0 - beta1) * g
        v = beta2 * state.second_moment[i] + (1.0 - beta2) * (g * g)
        update = weight_decay * p.data + (m / bc1) / (np.sqrt(v / bc2) + eps)
        q = p.data - lr * update
        if not np.all(np.isfinite(q)):
            raise NonFiniteError(f"adamw_step: non-finite update for parameter {i} of shape {p.shape}")
        new_m.append(m.astype(p.dtype, copy=False))
        new_v.append(v.astype(p.dtype, copy=False))
        new_p.append(q.astype(p.dtype, copy=False))
    for i, p in enumerate(params):
        p.data = new_p[i]
    state.first_moment, state.second_moment = new_m, new_v
    state.step_count = t
    return state


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    warmup_epochs: int
    total_epochs: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_epochs < 0 or self.total_epochs <= self.warmup_epochs:
            raise ValueError(f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}")


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    """Linear warmup from 0, then half-cycle cosine decay to 0 at ``total_epochs``."""
    w, T = schedule.warmup_epochs, schedule.total_epochs
    if not (0 <= epoch <= T):
        raise ValueError(f"epoch {epoch} outside [0, {T}]")
    if epoch < w:
        return schedule.base_lr * epoch / w
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (T - w)))
