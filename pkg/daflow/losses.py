"""Training objective: L1, perceptual and style terms summed over scales.

The perceptual network is a frozen conv stack with five tap points. By default
it is a seeded random network; converted pretrained weights can be loaded from
a tensor archive whose manifest config lists `strides` and `taps`.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from daflow.errors import ConfigError, ContractError, ShapeError
from daflow.layers import LEAKY_SLOPE, Conv2d, Module
from daflow.tensor_core import Tensor, abs_, gram, leaky_relu, mean_all
from daflow.tensor_io import load_archive, save_archive

NUM_TAPS = 5
DEFAULT_CHANNELS = [16, 32, 32, 64, 64]
DEFAULT_STRIDES = [1, 2, 1, 2, 1]


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    prec: float = 1.0
    style: float = 100.0

    def __post_init__(self):
        if min(self.l1, self.prec, self.style) < 0:
            raise ConfigError(f"Loss weights must be nonnegative, got {self}")


class PerceptualExtractor(Module):
    """Frozen feature network; tap i is the activation after conv i."""

    def __init__(self, seed: int = 0, channels: Sequence[int] = DEFAULT_CHANNELS,
                 strides: Sequence[int] = DEFAULT_STRIDES, min_size: int = 16):
        if len(channels) != NUM_TAPS or len(strides) != NUM_TAPS:
            raise ConfigError(f"Perceptual extractor needs {NUM_TAPS} layers")
        rng = np.random.default_rng(seed)
        chans = [3] + list(channels)
        self.strides = list(strides)
        self.min_size = min_size
        self.convs = [Conv2d(chans[i], chans[i + 1], 3, rng, stride=strides[i], trainable=False)
                      for i in range(NUM_TAPS)]
        self.assign_names()

    def taps(self, x: Tensor) -> List[Tensor]:
        if min(x.dims[2], x.dims[3]) < self.min_size:
            raise ConfigError(f"Perceptual extractor needs inputs of at least {self.min_size}px, got {x.dims}")
        feats = []
        for conv in self.convs:
            x = leaky_relu(conv(x), LEAKY_SLOPE)
            feats.append(x)
        return feats

    def save(self, root):
        save_archive(root, self.state_dict(),
                     {'strides': ','.join(map(str, self.strides)), 'min_size': str(self.min_size)})

    @classmethod
    def load(cls, root) -> 'PerceptualExtractor':
        tensors, config = load_archive(root)
        strides = [int(s) for s in config.get('strides', ','.join(map(str, DEFAULT_STRIDES))).split(',')]
        channels = [tensors[f"convs.{i}.weight"].shape[0] for i in range(NUM_TAPS)
                    if f"convs.{i}.weight" in tensors]
        if len(channels) != NUM_TAPS:
            raise ConfigError(f"Extractor archive {root} must hold {NUM_TAPS} conv layers")
        extractor = cls(channels=channels, strides=strides,
                        min_size=int(config.get('min_size', 16)))
        extractor.load_state_dict(tensors)
        return extractor


def _check_dims(a: Tensor, b: Tensor, name: str):
    if a.dims != b.dims:
        raise ShapeError(f"{name}: output {a.dims} vs target {b.dims}")


def l1_loss(out: Tensor, target: Tensor) -> Tensor:
    """Mean absolute difference."""
    _check_dims(out, target, 'l1_loss')
    return mean_all(abs_(out - target))


def perceptual_loss(out: Tensor, target: Tensor, extractor: PerceptualExtractor) -> Tensor:
    _check_dims(out, target, 'perceptual_loss')
    total = None
    for fo, ft in zip(extractor.taps(out), extractor.taps(target.detach())):
        term = l1_loss(fo, ft)
        total = term if total is None else total + term
    return total


def style_loss(out: Tensor, target: Tensor, extractor: PerceptualExtractor) -> Tensor:
    _check_dims(out, target, 'style_loss')
    total = None
    for fo, ft in zip(extractor.taps(out), extractor.taps(target.detach())):
        term = l1_loss(gram(fo), gram(ft))
        total = term if total is None else total + term
    return total


def level_factor(n: int, weighting: str = 'n_plus_1') -> float:
    """Weight of scale n (1 = coarsest)."""
    if weighting == 'n_plus_1':
        return float(n + 1)
    if weighting == 'n_minus_1':
        return float(n - 1)
    raise ConfigError(f"Unknown level weighting '{weighting}'")


def scale_loss(out: Tensor, target: Tensor, weights: LossWeights,
               extractor: Optional[PerceptualExtractor]) -> Dict[str, Tensor]:
    """Unweighted components at one scale; perceptual terms only where the extractor fits."""
    parts = {'l1': l1_loss(out, target)}
    usable = extractor is not None and min(out.dims[2], out.dims[3]) >= extractor.min_size
    if usable and weights.prec > 0:
        parts['prec'] = perceptual_loss(out, target, extractor)
    if usable and weights.style > 0:
        parts['style'] = style_loss(out, target, extractor)
    return parts


def total_loss(previews: Sequence[Tensor], targets: Sequence[Tensor], weights: LossWeights,
               extractor: Optional[PerceptualExtractor] = None,
               weighting: str = 'n_plus_1'):
    """Multi-scale objective; previews and targets are ordered coarsest first.

    Returns (loss, components) where components holds the float value of every
    weighted term, keyed like 'l1/2'.
    """
    if len(previews) != len(targets):
        raise ContractError(f"total_loss got {len(previews)} previews and {len(targets)} targets")
    if not previews:
        raise ContractError("total_loss needs at least one scale")
    lambdas = {'l1': weights.l1, 'prec': weights.prec, 'style': weights.style}
    total, components = None, {}
    for n, (out, target) in enumerate(zip(previews, targets), start=1):
        factor = level_factor(n, weighting)
        for name, value in scale_loss(out, target, weights, extractor).items():
            term = value * (factor * lambdas[name])
            components[f"{name}/{n}"] = term.item()
            total = term if total is None else total + term
    return total, components
