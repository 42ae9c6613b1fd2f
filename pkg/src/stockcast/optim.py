"""Optimizers and learning-rate schedules.

Adam follows the canonical bias-corrected update
    m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
with eps added outside the square root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, NumericError, Tensor


class Optimizer:
    """Steps a fixed set of named parameters; lr is mutable between steps."""

    def __init__(self, named_params, lr: float):
        self.named_params: list[tuple[str, Tensor]] = list(named_params)
        if not self.named_params:
            raise ContractError("optimizer needs at least one trainable parameter")
        self.lr = float(lr)

    def _gradient(self, name: str, p: Tensor) -> np.ndarray:
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
        return p.grad

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


class SGD(Optimizer):
    def step(self):
        for name, p in self.named_params:
            g = self._gradient(name, p)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name}")
            p.data -= (self.lr * g).astype(p.dtype, copy=False)


class Adam(Optimizer):
    def __init__(self, named_params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(named_params, lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for name, p in self.named_params:
            g = self._gradient(name, p)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name} at step {self.t}")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * np.square(g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.dtype, copy=False)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": dict(self.m), "v": dict(self.v)}


def clip_grad_norm(named_params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm; returns the raw norm."""
    total = 0.0
    for name, p in named_params:
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
        total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, p in named_params:
            p.grad = (p.grad * scale).astype(p.grad.dtype, copy=False)
    return norm


@dataclass(frozen=True)
class LRSchedule:
    """Constant lr, or a periodic one-cycle shape.

    One cycle spans cycle_epochs * steps_per_epoch optimizer steps: a linear
    rise from max_lr/start_div to max_lr over the first warm_fraction of the
    cycle, then a cosine fall to max_lr/end_div. The pattern repeats every
    cycle. The warmup length is rounded to a whole step so the peak is always
    hit exactly.
    """

    kind: str
    max_lr: float
    cycle_epochs: int = 3
    warm_fraction: float = 0.3
    start_div: float = 25.0
    end_div: float = 2500.0

    def __post_init__(self):
        if self.kind not in ("constant", "one_cycle"):
            raise ContractError(f"unknown schedule kind {self.kind!r}")
        if self.max_lr <= 0:
            raise ContractError(f"max_lr must be positive, got {self.max_lr}")
        if self.kind == "one_cycle" and self.cycle_epochs < 1:
            raise ContractError(f"cycle_epochs must be >= 1, got {self.cycle_epochs}")


def constant(lr: float) -> LRSchedule:
    return LRSchedule(kind="constant", max_lr=lr)


def one_cycle(max_lr: float, cycle_epochs: int = 3, warm_fraction: float = 0.3,
              start_div: float = 25.0, end_div: float = 2500.0) -> LRSchedule:
    return LRSchedule("one_cycle", max_lr, cycle_epochs, warm_fraction, start_div, end_div)


def lr_at(schedule: LRSchedule, global_step: int, steps_per_epoch: int) -> float:
    if steps_per_epoch < 1:
        raise ContractError(f"steps_per_epoch must be >= 1, got {steps_per_epoch}")
    if global_step < 0:
        raise ContractError(f"global_step must be >= 0, got {global_step}")
    if schedule.kind == "constant":
        return schedule.max_lr
    cycle_len = schedule.cycle_epochs * steps_per_epoch
    if cycle_len == 1:
        return schedule.max_lr
    pos = global_step % cycle_len
    warm = min(max(1, round(schedule.warm_fraction * cycle_len)), cycle_len - 1)
    start = schedule.max_lr / schedule.start_div
    end = schedule.max_lr / schedule.end_div
    if pos <= warm:
        return start + (schedule.max_lr - start) * (pos / warm)
    frac = (pos - warm) / (cycle_len - warm)
    return end + (schedule.max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * frac))
