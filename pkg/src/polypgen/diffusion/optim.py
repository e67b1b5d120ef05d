"""Adaptive-moment optimizer with decoupled weight decay.

Bias correction uses the folded step size
lr * sqrt(1 - beta2^t) / (1 - beta1^t) applied to m / (sqrt(v) + eps),
and the decay term lr * wd * p is subtracted separately from the
gradient-driven update.
"""

from dataclasses import dataclass, field

import numpy as np

from ..errors import TrainingError
from .model import DenoiserModel


@dataclass
class OptimizerParams:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    eps: float = 1e-8
    lam: float = 0.5  # lesion-loss weight, carried with the other hyperparameters

    def validate(self):
        if self.lam < 0:
            raise ValueError("lesion weight must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment decay rates must lie in [0, 1)")


@dataclass
class TrainState:
    model: DenoiserModel
    opt: OptimizerParams
    m: np.ndarray = field(default=None)  # type: ignore[assignment]
    v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step: int = 0

    def __post_init__(self):
        self.opt.validate()
        if self.m is None:
            self.m = np.zeros_like(self.model.params)
        if self.v is None:
            self.v = np.zeros_like(self.model.params)
        if self.m.shape != self.model.params.shape or self.v.shape != self.model.params.shape:
            raise ValueError("moment vectors must match the parameter vector")


def optimizer_step(state: TrainState, grads: np.ndarray) -> TrainState:
    """One in-place parameter update; aborts on non-finite gradients."""
    if grads.shape != state.model.params.shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape")
    if not np.isfinite(grads).all():
        raise TrainingError(f"non-finite gradient at step {state.step + 1}")
    o = state.opt
    state.step += 1
    state.m[:] = o.beta1 * state.m + (1.0 - o.beta1) * grads
    state.v[:] = o.beta2 * state.v + (1.0 - o.beta2) * grads**2
    step_size = o.lr * np.sqrt(1.0 - o.beta2**state.step) / (1.0 - o.beta1**state.step)
    p = state.model.params
    update = step_size * state.m / (np.sqrt(state.v) + o.eps)
    if o.weight_decay:
        update = update + o.lr * o.weight_decay * p
    p -= update
    return state
