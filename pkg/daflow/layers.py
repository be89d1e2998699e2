"""Parameter containers and the conv building blocks shared by every network."""

from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from daflow.errors import ConfigError, ShapeError
from daflow.tensor_core import Parameter, Tensor, conv2d, default_dtype, leaky_relu

LEAKY_SLOPE = 0.1


def kaiming_normal(shape, rng: np.random.Generator, slope: float = LEAKY_SLOPE) -> np.ndarray:
    """Fan-in scaled normal init for leaky-relu networks."""
    fan_in = int(np.prod(shape[1:]))
    std = np.sqrt(2.0 / ((1.0 + slope ** 2) * fan_in))
    return (rng.standard_normal(shape) * std).astype(default_dtype())


class Module:
    """Minimal module tree; parameter paths come from attribute names."""

    def named_parameters(self, prefix: str = '') -> Iterator[Tuple[str, Parameter]]:
        seen = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix):
        for attr, value in vars(self).items():
            path = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value._walk(path + '.')
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{path}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.trainable]

    def assign_names(self, prefix: str = ''):
        for name, p in self.named_parameters(prefix):
            p.name = name
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise ConfigError(f"State mismatch; missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name])
            if arr.shape != p.data.shape:
                raise ShapeError(f"Parameter '{name}' expects {p.data.shape}, got {arr.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)
            p.zero_grad()


class Conv2d(Module):

    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: Optional[int] = None, zero_init: bool = False,
                 trainable: bool = True):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        shape = (out_ch, in_ch, kernel, kernel)
        w = np.zeros(shape, dtype=default_dtype()) if zero_init else kaiming_normal(shape, rng)
        self.weight = Parameter('weight', w, trainable=trainable)
        self.bias = Parameter('bias', np.zeros((1, out_ch, 1, 1), dtype=default_dtype()),
                              trainable=trainable)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ResidualBlock(Module):
    """x + act(conv(act(conv(x)))), channel preserving."""

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.conv2 = Conv2d(channels, channels, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        h = leaky_relu(self.conv1(x), LEAKY_SLOPE)
        h = leaky_relu(self.conv2(h), LEAKY_SLOPE)
        return x + h
