"""The SDAFN network: twin feature pyramids, multiple-flow-field estimators,
the per-level DAFN block and the shallow encoder/decoder.

Pyramid level 1 is the coarsest; the finest level sits at half the input
resolution and its flows are upsampled once more before the pixel-level merge.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from daflow.config import NUM_KEYPOINTS
from daflow.errors import ConfigError, ShapeError
from daflow.layers import LEAKY_SLOPE, Conv2d, Module, ResidualBlock
from daflow.tensor_core import (
    Tensor,
    area_downsample,
    concat_channels,
    leaky_relu,
    resize_bilinear,
    sigmoid,
    upsample_bilinear2x,
)
from daflow.warp_ops import (
    daw_warp,
    merge_two_streams,
    split_streams,
    upsample_attention,
    upsample_flow,
)

MERGE_MODES = ('joint_softmax', 'concat')
ROLES = ('self', 'cross', 'refine')


@dataclass
class DafnConfig:
    levels: int = 5
    samples: int = 6
    fpn_channels: List[int] = field(default_factory=lambda: [64, 96, 128, 256, 256])
    fpn_out_channels: int = 64
    mfe_hidden: List[int] = field(default_factory=lambda: [256, 128, 64, 32])
    mfe_kernels: List[int] = field(default_factory=lambda: [3, 7, 7, 7])
    shallow_channels: List[int] = field(default_factory=lambda: [32, 64])
    single_branch: bool = False
    merge_mode: str = 'joint_softmax'
    keypoint_channels: int = NUM_KEYPOINTS
    cascade: bool = True
    shallow_codec: bool = True
    image_height: int = 256
    image_width: int = 192
    heatmap_sigma: float = 3.0

    def validate(self):
        if self.levels < 2:
            raise ConfigError(f"levels must be >= 2, got {self.levels}")
        if self.samples < 1:
            raise ConfigError(f"samples (K) must be >= 1, got {self.samples}")
        if len(self.fpn_channels) != self.levels:
            raise ConfigError(f"fpn_channels needs {self.levels} entries, got {self.fpn_channels}")
        if len(self.mfe_hidden) != 4 or len(self.mfe_kernels) != 4:
            raise ConfigError(f"mfe_hidden and mfe_kernels need 4 entries, got {self.mfe_hidden} / {self.mfe_kernels}")
        if any(k % 2 == 0 for k in self.mfe_kernels):
            raise ConfigError(f"mfe_kernels must be odd, got {self.mfe_kernels}")
        if len(self.shallow_channels) != 2:
            raise ConfigError(f"shallow_channels needs 2 entries, got {self.shallow_channels}")
        if self.merge_mode not in MERGE_MODES:
            raise ConfigError(f"merge_mode must be one of {MERGE_MODES}, got '{self.merge_mode}'")
        if self.merge_mode == 'concat' and (not self.shallow_codec or self.single_branch):
            raise ConfigError("merge_mode=concat needs the shallow codec and both streams")
        if self.keypoint_channels < 0:
            raise ConfigError(f"keypoint_channels must be >= 0, got {self.keypoint_channels}")
        self.check_dims(self.image_height, self.image_width)
        return self

    def check_dims(self, height: int, width: int):
        step = 2 ** self.levels
        if height % step or width % step:
            raise ConfigError(f"Image dims {height}x{width} must be divisible by 2^{self.levels}={step}")

    def level_factor(self, level: int) -> int:
        """Downsampling factor of pyramid level `level` (1 = coarsest)."""
        return 2 ** (self.levels - level + 1)


@dataclass
class LevelState:
    """Accumulated flows and attention after one DAFN level."""
    level: int
    flow_s: Tensor
    attn_s: Tensor
    residual_s: Tensor
    flow_r: Optional[Tensor] = None
    attn_r: Optional[Tensor] = None
    residual_r: Optional[Tensor] = None
    upsampled_s: Optional[Tensor] = None
    upsampled_r: Optional[Tensor] = None
    preview: Optional[Tensor] = None

    @property
    def dims(self) -> Tuple[int, int]:
        return self.flow_s.dims[2], self.flow_s.dims[3]


@dataclass
class ForwardResult:
    output: Tensor
    previews: List[Tensor]
    states: List[LevelState]
    flows: Dict[str, Optional[Tensor]]


class EncoderLevel(Module):
    """Stride-2 downsampling conv followed by two residual blocks."""

    def __init__(self, in_ch: int, out_ch: int, rng: np.random.Generator):
        self.down = Conv2d(in_ch, out_ch, 3, rng, stride=2)
        self.res1 = ResidualBlock(out_ch, rng)
        self.res2 = ResidualBlock(out_ch, rng)

    def __call__(self, x: Tensor) -> Tensor:
        x = leaky_relu(self.down(x), LEAKY_SLOPE)
        return self.res2(self.res1(x))


class PyramidExtractor(Module):
    """Bottom-up encoder plus a top-down path with lateral 1x1 convs."""

    def __init__(self, in_ch: int, config: DafnConfig, rng: np.random.Generator):
        chans = [in_ch] + list(config.fpn_channels)
        out = config.fpn_out_channels
        self.levels = [EncoderLevel(chans[i], chans[i + 1], rng) for i in range(config.levels)]
        self.laterals = [Conv2d(c, out, 1, rng) for c in config.fpn_channels]
        self.smooth = [Conv2d(out, out, 3, rng) for _ in config.fpn_channels]

    def __call__(self, x: Tensor) -> List[Tensor]:
        encoded = []
        for level in self.levels:
            x = level(x)
            encoded.append(x)
        outputs = []
        top = None
        for i in reversed(range(len(encoded))):
            p = self.laterals[i](encoded[i])
            if top is not None:
                p = p + upsample_bilinear2x(top)
            top = p
            outputs.append(self.smooth[i](p))
        return outputs


class FlowEstimator(Module):
    """Multiple flow field estimator: four hidden convs and a zero-initialized head.

    The head emits 2K offset channels followed by K attention logits per stream.
    """

    def __init__(self, in_ch: int, role: str, samples: int, streams: int,
                 config: DafnConfig, rng: np.random.Generator):
        if role not in ROLES:
            raise ConfigError(f"Unknown estimator role '{role}'")
        self.role = role
        self.samples = samples
        self.streams = streams
        self.in_channels = in_ch
        chans = [in_ch] + list(config.mfe_hidden)
        self.convs = [Conv2d(chans[i], chans[i + 1], config.mfe_kernels[i], rng) for i in range(4)]
        self.head = Conv2d(chans[-1], 3 * samples * streams, 3, rng, zero_init=True)

    @property
    def out_channels(self) -> int:
        return 3 * self.samples * self.streams

    def __call__(self, x: Tensor) -> Tensor:
        if x.dims[1] != self.in_channels:
            raise ShapeError(f"{self.role} estimator expects {self.in_channels} channels, got {x.dims}")
        for conv in self.convs:
            x = leaky_relu(conv(x), LEAKY_SLOPE)
        return self.head(x)


def mfe_forward(estimator: FlowEstimator, features: Tensor):
    """Run an estimator and split its channels by role.

    self/cross -> (offsets, logits); refine -> (d_s, d_r, a_s, a_r), or
    (d_s, a_s) when the estimator only serves the source stream.
    """
    out = estimator(features)
    k = estimator.samples
    if estimator.role == 'refine' and estimator.streams == 2:
        return tuple(split_streams(out, (2 * k, 2 * k, k, k)))
    return tuple(split_streams(out, (2 * k, k)))


class DafnBlock(Module):
    """Self-, Cross- and Refine-MFE chained at one pyramid level."""

    def __init__(self, channels: int, config: DafnConfig, rng: np.random.Generator):
        k = config.samples
        self.single_branch = config.single_branch
        if not self.single_branch:
            self.self_mfe = FlowEstimator(channels, 'self', k, 1, config, rng)
        self.cross_mfe = FlowEstimator(2 * channels, 'cross', k, 1, config, rng)
        self.refine_mfe = FlowEstimator(2 * channels, 'refine', k, 1 if self.single_branch else 2,
                                        config, rng)

    def __call__(self, x_r: Tensor, x_s: Tensor, prev: Optional[LevelState], level: int,
                 hooks: List[Callable] = ()) -> LevelState:
        def emit(name, t):
            for hook in hooks:
                hook(level, name, t)

        up_s = up_r = None
        if prev is not None:
            up_s = upsample_flow(prev.flow_s)
            x_s = daw_warp(x_s, up_s, upsample_attention(prev.attn_s))
            if not self.single_branch:
                up_r = upsample_flow(prev.flow_r)
                x_r = daw_warp(x_r, up_r, upsample_attention(prev.attn_r))

        if self.single_branch:
            d_s_dot, a_s_dot = mfe_forward(self.cross_mfe, concat_channels([x_s, x_r]))
            emit('cross_attn_dot', a_s_dot)
            warped_s = daw_warp(x_s, d_s_dot, a_s_dot)
            d_s_ddot, a_s = mfe_forward(self.refine_mfe, concat_channels([warped_s, x_r]))
            emit('refine_attn_s', a_s)
            residual_s = d_s_dot + d_s_ddot
            flow_s = residual_s if up_s is None else up_s + residual_s
            return LevelState(level=level, flow_s=flow_s, attn_s=a_s, residual_s=residual_s,
                              upsampled_s=up_s)

        d_r_dot, a_r_dot = mfe_forward(self.self_mfe, x_r)
        emit('self_attn_dot', a_r_dot)
        warped_r = daw_warp(x_r, d_r_dot, a_r_dot)
        d_s_dot, a_s_dot = mfe_forward(self.cross_mfe, concat_channels([x_s, warped_r]))
        emit('cross_attn_dot', a_s_dot)
        warped_s = daw_warp(x_s, d_s_dot, a_s_dot)
        d_s_ddot, d_r_ddot, a_s, a_r = mfe_forward(self.refine_mfe,
                                                   concat_channels([warped_s, warped_r]))
        emit('refine_attn_s', a_s)
        emit('refine_attn_r', a_r)
        residual_r = d_r_dot + d_r_ddot
        residual_s = d_s_dot + d_s_ddot
        flow_r = residual_r if up_r is None else up_r + residual_r
        flow_s = residual_s if up_s is None else up_s + residual_s
        return LevelState(level=level, flow_s=flow_s, attn_s=a_s, residual_s=residual_s,
                          flow_r=flow_r, attn_r=a_r, residual_r=residual_r,
                          upsampled_s=up_s, upsampled_r=up_r)


class ShallowEncoder(Module):

    def __init__(self, channels: List[int], rng: np.random.Generator):
        self.conv1 = Conv2d(3, channels[0], 3, rng)
        self.conv2 = Conv2d(channels[0], channels[1], 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return leaky_relu(self.conv2(leaky_relu(self.conv1(x), LEAKY_SLOPE)), LEAKY_SLOPE)


class ShallowDecoder(Module):

    def __init__(self, in_ch: int, channels: List[int], rng: np.random.Generator):
        self.conv1 = Conv2d(in_ch, channels[0], 3, rng)
        self.conv2 = Conv2d(channels[0], 3, 3, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.conv2(leaky_relu(self.conv1(x), LEAKY_SLOPE)))


class SDAFN(Module):
    """Single-stage try-on network driven by deformable attention flows."""

    def __init__(self, config: DafnConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        c = config.fpn_out_channels
        self.fpn_ref = PyramidExtractor(3 + config.keypoint_channels, config, rng)
        self.fpn_src = PyramidExtractor(3, config, rng)
        n_blocks = config.levels if config.cascade else 1
        self.dafn = [DafnBlock(c, config, rng) for _ in range(n_blocks)]
        if config.shallow_codec:
            self.encoder = ShallowEncoder(config.shallow_channels, rng)
            dec_in = config.shallow_channels[1] * (2 if config.merge_mode == 'concat' else 1)
            self.decoder = ShallowDecoder(dec_in, config.shallow_channels, rng)
        self.hooks: List[Callable] = []
        self.assign_names()

    def extract_pyramid(self, x: Tensor, which: str) -> List[Tensor]:
        if which not in ('reference', 'source'):
            raise ConfigError(f"Pyramid branch must be 'reference' or 'source', got '{which}'")
        self.config.check_dims(x.dims[2], x.dims[3])
        expected = 3 + self.config.keypoint_channels if which == 'reference' else 3
        if x.dims[1] != expected:
            raise ShapeError(f"{which} branch expects {expected} input channels, got {x.dims}")
        return (self.fpn_ref if which == 'reference' else self.fpn_src)(x)

    def estimate_flows(self, person_masked: Tensor, keypoints: Tensor,
                       garment: Tensor) -> List[LevelState]:
        """Pyramid extraction followed by the coarse-to-fine DAFN cascade."""
        if person_masked.dims != garment.dims or keypoints.dims[0] != person_masked.dims[0]:
            raise ShapeError(f"Input mismatch: person {person_masked.dims}, keypoints {keypoints.dims}, garment {garment.dims}")
        pyr_r = self.extract_pyramid(concat_channels([person_masked, keypoints]), 'reference')
        pyr_s = self.extract_pyramid(garment, 'source')
        levels = range(self.config.levels) if self.config.cascade else [self.config.levels - 1]
        states, prev = [], None
        for block, idx in zip(self.dafn, levels):
            prev = block(pyr_r[idx], pyr_s[idx], prev, idx + 1, self.hooks)
            states.append(prev)
        return states

    def _merge(self, person: Tensor, garment: Tensor, flows: Dict[str, Optional[Tensor]],
               mode: str) -> Tensor:
        if self.config.single_branch:
            return daw_warp(garment, flows['flow_s'], flows['attn_s'])
        if mode == 'concat':
            return concat_channels([daw_warp(person, flows['flow_r'], flows['attn_r']),
                                    daw_warp(garment, flows['flow_s'], flows['attn_s'])])
        return merge_two_streams(person, garment, flows['flow_r'], flows['flow_s'],
                                 flows['attn_r'], flows['attn_s'])

    def render(self, person_masked: Tensor, garment: Tensor,
               flows: Dict[str, Optional[Tensor]]) -> Tensor:
        """Shallow encode, merge with full-resolution flows, decode to RGB."""
        if not self.config.shallow_codec:
            return self._merge(person_masked, garment, flows, 'joint_softmax')
        merged = self._merge(self.encoder(person_masked), self.encoder(garment), flows,
                             self.config.merge_mode)
        return self.decoder(merged)

    def previews(self, person_masked: Tensor, garment: Tensor,
                 states: List[LevelState]) -> List[Tensor]:
        """Per-level previews: joint-softmax merge of area-downsampled raw images."""
        h = person_masked.dims[2]
        out = []
        for st in states:
            factor = h // st.dims[0]
            flows = {'flow_r': st.flow_r, 'flow_s': st.flow_s,
                     'attn_r': st.attn_r, 'attn_s': st.attn_s}
            st.preview = self._merge(area_downsample(person_masked, factor),
                                     area_downsample(garment, factor), flows, 'joint_softmax')
            out.append(st.preview)
        return out

    @staticmethod
    def final_flows(state: LevelState, height: int, width: int) -> Dict[str, Optional[Tensor]]:
        """Resize the finest level's flows and logits to (height, width)."""
        def up(t):
            return None if t is None else resize_bilinear(t, height, width)
        return {'flow_r': up(state.flow_r), 'flow_s': up(state.flow_s),
                'attn_r': up(state.attn_r), 'attn_s': up(state.attn_s)}

    def forward(self, person_masked: Tensor, keypoints: Tensor, garment: Tensor,
                with_previews: bool = True) -> ForwardResult:
        states = self.estimate_flows(person_masked, keypoints, garment)
        _, _, h, w = person_masked.dims
        flows = self.final_flows(states[-1], h, w)
        output = self.render(person_masked, garment, flows)
        previews = self.previews(person_masked, garment, states) if with_previews else []
        return ForwardResult(output=output, previews=previews, states=states, flows=flows)

    __call__ = forward


def sdafn_forward(model: SDAFN, person_masked: Tensor, keypoints: Tensor,
                  garment: Tensor) -> ForwardResult:
    """Training-time pass: final output plus one preview per level."""
    return model.forward(person_masked, keypoints, garment)


def shrink_to(x: Tensor, height: int, width: int) -> Tensor:
    _, _, h, w = x.dims
    if h % height == 0 and w % width == 0 and h // height == w // width:
        return area_downsample(x, h // height)
    return resize_bilinear(x, height, width)


def infer_at_resolution(model: SDAFN, person_masked: Tensor, keypoints: Tensor,
                        garment: Tensor, train_dims: Tuple[int, int]) -> Tensor:
    """Estimate flows at the training resolution and apply them at full resolution."""
    _, _, h2, w2 = person_masked.dims
    model.config.check_dims(h2, w2)
    h1, w1 = train_dims
    model.config.check_dims(h1, w1)
    if (h1, w1) == (h2, w2):
        return model.forward(person_masked, keypoints, garment, with_previews=False).output
    states = model.estimate_flows(shrink_to(person_masked, h1, w1), shrink_to(keypoints, h1, w1),
                                  shrink_to(garment, h1, w1))
    flows = model.final_flows(states[-1], h2, w2)
    return model.render(person_masked, garment, flows)
