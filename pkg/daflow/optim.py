"""AdamW with decoupled weight decay and the step learning-rate schedule."""

from dataclasses import dataclass
import math
from typing import Dict, Iterable, List, Optional

import numpy as np

from daflow.errors import ContractError, ShapeError
from daflow.tensor_core import Parameter


@dataclass
class LrSchedule:
    base_lr: float = 5e-5
    decay_factor: float = 0.1
    decay_every: int = 50

    def lr_at(self, epoch: int) -> float:
        if epoch < 0:
            raise ContractError(f"Epoch must be >= 0, got {epoch}")
        return self.base_lr * self.decay_factor ** (epoch // self.decay_every)


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    return schedule.lr_at(epoch)


class AdamW:
    """Bias-corrected Adam with decay applied to the pre-update weights."""

    def __init__(self, params: Iterable[Parameter], lr: float = 5e-5, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.01):
        self.params: List[Parameter] = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}
        if len(self.m) != len(self.params):
            raise ContractError("AdamW needs uniquely named parameters")

    def step(self):
        for p in self.params:
            if p.grad is None:
                raise ContractError(f"Parameter '{p.name}' has no gradient")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            decay = self.lr * self.weight_decay * p.data
            p.data = (p.data - update - decay).astype(p.data.dtype, copy=False)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {'t': np.array([self.t], dtype=np.float64)}
        for name in self.m:
            state[f"m.{name}"] = self.m[name]
            state[f"v.{name}"] = self.v[name]
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        if 't' not in state:
            raise ContractError("Optimizer state is missing the step count")
        for name in self.m:
            for kind, store in (('m', self.m), ('v', self.v)):
                arr = state.get(f"{kind}.{name}")
                if arr is None:
                    raise ContractError(f"Optimizer state is missing {kind}.{name}")
                if arr.shape != store[name].shape:
                    raise ShapeError(f"Optimizer {kind}.{name} expects {store[name].shape}, got {arr.shape}")
                store[name] = np.array(arr, dtype=store[name].dtype, copy=True)
        self.t = int(state['t'].reshape(-1)[0])


def adamw_step(optimizer: AdamW, lr: Optional[float] = None) -> AdamW:
    """One update using the gradients currently stored on the parameters."""
    if lr is not None:
        if not math.isfinite(lr) or lr <= 0:
            raise ContractError(f"Learning rate must be positive, got {lr}")
        optimizer.lr = lr
    optimizer.step()
    return optimizer
