"""
Adam with bias correction, and the one-way learning-rate drop.

``adam_step`` updates ParamTensors in place from their ``grad`` buffers.
``optimizer_step`` adds what every model needs after an update: the COFFEE
lambda projection and re-freezing the canonical embedding row
(``model.after_step``).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

try:
    from src.helpers.numerics import ParamTensor
except ImportError:
    from helpers.numerics import ParamTensor

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def moments_for(self, tensor: ParamTensor) -> Tuple[np.ndarray, np.ndarray]:
        if tensor.name not in self.m:
            self.m[tensor.name] = np.zeros_like(tensor.value)
            self.v[tensor.name] = np.zeros_like(tensor.value)
        m, v = self.m[tensor.name], self.v[tensor.name]
        if m.shape != tensor.value.shape:
            raise ValueError(
                f"Adam moments for '{tensor.name}' have shape {m.shape}, "
                f"parameter has {tensor.value.shape}"
            )
        return m, v


def adam_step(state: AdamState, tensors: Dict[str, ParamTensor]) -> None:
    """
    One bias-corrected Adam update of every tensor from its ``grad``.

    Zero gradients leave a freshly initialized parameter unchanged.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step_size = state.lr / bc1

    for tensor in tensors.values():
        m, v = state.moments_for(tensor)
        g = tensor.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        tensor.value -= step_size * m / (np.sqrt(v / bc2) + state.eps)


def optimizer_step(model, state: AdamState) -> None:
    adam_step(state, model.tensors())
    model.after_step()


# =============================================================================
# LEARNING RATE
# =============================================================================

@dataclass
class LRSchedule:
    """
    Constant lr, optionally dropped once to ``new_lr`` the first time the
    training loss falls below ``threshold``. The drop never reverts.
    """
    lr: float
    drop: Optional[Tuple[float, float]] = None
    dropped: bool = False

    @property
    def current(self) -> float:
        if self.dropped:
            return self.drop[1]
        return self.lr

    def update(self, train_loss: float) -> float:
        if self.drop is not None and not self.dropped and train_loss < self.drop[0]:
            self.dropped = True
            log.info("Training loss %.4f below %.3f: lr %g -> %g", train_loss, self.drop[0], self.lr, self.drop[1])
        return self.current


def lr_schedule(schedule: LRSchedule, train_loss: float) -> float:
    return schedule.update(train_loss)
