# -*- coding: utf-8 -*-
"""SGD with momentum and the step learning-rate schedules."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import DomainError, ScheduleError
from .tensor import Tensor

DEFAULT_TOTAL_EPOCHS = {"detector": 150, "classifier": 1050}


@dataclass
class OptimState:
    """Velocity buffers keyed by parameter position."""

    momentum: float = 0.9
    weight_decay: float = 1e-4
    epoch: int = 0
    velocity: Dict[int, np.ndarray] = field(default_factory=dict)


def sgd_step(
    params: Sequence[Tensor],
    grads: Sequence[Optional[np.ndarray]],
    state: OptimState,
    lr: float,
):
    """Apply one momentum step in place.

    v ← m·v + g + wd·w, then w ← w − lr·v. A parameter without a gradient
    is still decayed.

    Args:
        params: Parameter tensors
        grads: Matching gradients (None counts as zero)
        state: Optimizer state, updated in place
        lr: Learning rate (> 0)
    """
    if lr <= 0:
        raise DomainError(f"learning rate must be positive, got {lr}")
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p.data) if g is None else g
        v = state.velocity.get(i)
        if v is None:
            v = np.zeros_like(p.data)
        v = state.momentum * v + g + state.weight_decay * p.data
        state.velocity[i] = v
        p.data -= lr * v


class SGD:
    """Convenience wrapper binding a parameter list to an ``OptimState``."""

    def __init__(self, params: List[Tensor], momentum: float, weight_decay: float):
        self.params = params
        self.state = OptimState(momentum=momentum, weight_decay=weight_decay)

    def step(self, lr: float):
        sgd_step(self.params, [p.grad for p in self.params], self.state, lr)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def lr_schedule(
    epoch: int,
    task: str,
    total_epochs: Optional[int] = None,
    base_lr: float = 0.01,
) -> float:
    """Step schedule: base, then base/10 from half the run, base/100 from 80%.

    With the default totals this gives 75/120 for the detector (150 epochs)
    and 525/840 for the classifier (1,050 epochs).

    Args:
        epoch: Zero-based epoch index
        task: ``detector`` or ``classifier``
        total_epochs: Run length (task default if None)
        base_lr: Initial learning rate

    Returns:
        Learning rate for this epoch
    """
    if task not in DEFAULT_TOTAL_EPOCHS:
        raise ScheduleError(f"Unknown schedule task: {task}")
    total = DEFAULT_TOTAL_EPOCHS[task] if total_epochs is None else total_epochs
    if epoch < 0 or epoch >= total:
        raise ScheduleError(f"epoch {epoch} outside schedule of {total} epochs")
    if epoch < total * 0.5:
        return base_lr
    if epoch < total * 0.8:
        return base_lr / 10.0
    return base_lr / 100.0
