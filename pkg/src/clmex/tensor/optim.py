"""Adam with decoupled weight decay, and learning-rate schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor, TensorError


class NonFiniteGradientError(TensorError, FloatingPointError):
    pass


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
            **hyper,
        )


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam update with decoupled weight decay.

    Returns new parameter arrays; ``state`` is updated in place and also
    returned. Non-finite gradients abort the step before anything changes.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ValueError("params, grads and optimizer state have different lengths")
    for i, (p, g, m) in enumerate(zip(params, grads, state.first_moment)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"param {i}: shape {p.shape}, grad {g.shape}, moment {m.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteGradientError(f"param {i} (shape {p.shape}) has {bad} non-finite gradient entries")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i] = b1 * state.first_moment[i] + (1.0 - b1) * g
        v = state.second_moment[i] = b2 * state.second_moment[i] + (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        p_new = p - lr * update
        if state.weight_decay:
            p_new = p_new - lr * state.weight_decay * p
        new_params.append(p_new.astype(p.dtype, copy=False))
    return new_params, state


class Adam:
    """Stateful wrapper applying `adam_step` to a list of Tensors in place."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.state = AdamState.for_params(
            [p.data for p in self.params], beta1=betas[0], beta2=betas[1], epsilon=eps, weight_decay=weight_decay
        )

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float | None = None) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        new, _ = adam_step([p.data for p in self.params], grads, self.state, self.lr if lr is None else lr)
        for p, d in zip(self.params, new):
            p.data = d


# -- schedules -------------------------------------------------------------------


@dataclass
class ConstantSchedule:
    base_lr: float
    kind: str = field(default="constant", init=False)

    def lr_at(self, step: int) -> float:
        return self.base_lr


@dataclass
class CosineSchedule:
    """lr(step) = base_lr * 0.5 * (1 + cos(pi * step / total_steps)); steps clamp to [0, total_steps]."""

    base_lr: float
    total_steps: int
    kind: str = field(default="cosine_decay", init=False)

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError("cosine schedule needs total_steps >= 1")

    def lr_at(self, step: int) -> float:
        step = min(max(step, 0), self.total_steps)
        if step == 0:
            return self.base_lr
        if step == self.total_steps:
            return 0.0
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * step / self.total_steps))


@dataclass
class PlateauSchedule:
    """Multiply lr by `decay_factor` once `patience` consecutive evaluations fail to improve.

    Improvement means the monitored metric drops strictly below the best
    value seen so far. The bad-evaluation counter resets after each decay.
    """

    base_lr: float
    decay_factor: float = 0.5
    patience: int = 3
    min_lr: float = 0.0
    kind: str = field(default="plateau_decay", init=False)
    lr: float = field(init=False)
    best: float = field(default=math.inf, init=False)
    num_bad: int = field(default=0, init=False)
    history: list[float] = field(default_factory=list, init=False)

    def __post_init__(self):
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError("decay_factor must be in (0, 1]")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        self.lr = self.base_lr

    def observe(self, metric: float) -> float:
        self.history.append(float(metric))
        if metric < self.best:
            self.best = float(metric)
            self.num_bad = 0
        else:
            self.num_bad += 1
            if self.num_bad >= self.patience:
                self.lr = max(self.lr * self.decay_factor, self.min_lr)
                self.num_bad = 0
        return self.lr


LrSchedule = ConstantSchedule | CosineSchedule | PlateauSchedule


def schedule_lr(schedule: LrSchedule, step_or_metric) -> float:
    """Learning rate for a step (cosine/constant) or after observing a metric (plateau)."""
    if isinstance(schedule, PlateauSchedule):
        return schedule.observe(step_or_metric)
    return schedule.lr_at(int(step_or_metric))
