"""Differentiable warping: bilinear sampling, deformable attention warping,
flow upsampling and the final two-stream merge.

Offsets live in normalized coordinates: (-1, -1) is the centre of the top-left
pixel and (+1, +1) the centre of the bottom-right one, so upsampling a flow
never rescales its values. Samples that fall outside the image read zeros.
"""

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from daflow.errors import ShapeError
from daflow.tensor_core import (
    Tensor,
    _accumulate,
    _make,
    concat_channels,
    slice_channels,
    softmax_groups,
    upsample_bilinear2x,
)


@dataclass
class FlowField:
    """K sampling offset fields, channel pairs (dx, dy) per sample."""
    offsets: Tensor

    def __post_init__(self):
        if self.offsets.dims[1] == 0 or self.offsets.dims[1] % 2:
            raise ShapeError(f"FlowField needs an even, positive channel count, got {self.offsets.dims}")

    @property
    def K(self) -> int:
        return self.offsets.dims[1] // 2


@dataclass
class AttentionMaps:
    """K pre-softmax attention logits per pixel."""
    logits: Tensor

    @property
    def K(self) -> int:
        return self.logits.dims[1]


FlowLike = Union[Tensor, FlowField]
AttnLike = Union[Tensor, AttentionMaps]


def _offsets(flow: FlowLike) -> Tensor:
    t = flow.offsets if isinstance(flow, FlowField) else flow
    if t.dims[1] == 0 or t.dims[1] % 2:
        raise ShapeError(f"Flow must have an even channel count, got {t.dims}")
    return t


def _logits(attn: AttnLike) -> Tensor:
    return attn.logits if isinstance(attn, AttentionMaps) else attn


def _corner_terms(flow: np.ndarray, h: int, w: int):
    """Pixel-space sampling geometry for every (sample, pixel)."""
    b, two_k = flow.shape[:2]
    k = two_k // 2
    f = flow.reshape(b, k, 2, h, w).astype(np.float64)
    sx = (w - 1) / 2.0
    sy = (h - 1) / 2.0
    jj = np.arange(w, dtype=np.float64)[None, None, None, :]
    ii = np.arange(h, dtype=np.float64)[None, None, :, None]
    px = jj + f[:, :, 0] * sx
    py = ii + f[:, :, 1] * sy
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    corners = []
    for dy, dx, wgt in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)),
                        (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        idx = np.where(valid, yi * w + xi, 0)
        corners.append((idx, valid, wgt))
    return k, sx, sy, fx, fy, corners


def deform_sample(x: Tensor, flow: FlowLike) -> Tensor:
    """Bilinearly sample `x` at K offset fields; output is (b, K*C, h, w),
    with sample k occupying channels [k*C, (k+1)*C)."""
    flow = _offsets(flow)
    b, c, h, w = x.dims
    if flow.dims[0] != b or flow.dims[2:] != (h, w):
        raise ShapeError(f"Flow {flow.dims} does not match features {x.dims}")
    k, sx, sy, fx, fy, corners = _corner_terms(flow.data, h, w)
    xf = x.data.reshape(b, c, h * w)
    n = k * h * w
    values = []
    acc = np.zeros((b, c, n), dtype=np.float64)
    for idx, valid, wgt in corners:
        v = np.take_along_axis(xf, idx.reshape(b, 1, n), axis=2) * valid.reshape(b, 1, n)
        values.append(v)
        acc += v * wgt.reshape(b, 1, n)
    y = acc.reshape(b, c, k, h, w).transpose(0, 2, 1, 3, 4).reshape(b, k * c, h, w)
    out = _make(y.astype(x.dtype), (x, flow), 'deform_sample')

    def _backward():
        g = out.grad.reshape(b, k, c, h, w).transpose(0, 2, 1, 3, 4).reshape(b, c, n)
        if x.requires_grad:
            offsets = (np.arange(b)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
            gx = np.zeros(b * c * h * w, dtype=np.float64)
            for idx, valid, wgt in corners:
                contrib = g * (wgt * valid).reshape(b, 1, n)
                gx += np.bincount((offsets + idx.reshape(b, 1, n)).ravel(),
                                  weights=contrib.ravel(), minlength=gx.size)
            _accumulate(x, gx.reshape(b, c, h, w).astype(x.dtype))
        if flow.requires_grad:
            v00, v01, v10, v11 = values
            fxr = fx.reshape(b, 1, n)
            fyr = fy.reshape(b, 1, n)
            ddx = ((v01 - v00) * (1 - fyr) + (v11 - v10) * fyr) * g
            ddy = ((v10 - v00) * (1 - fxr) + (v11 - v01) * fxr) * g
            gflow = np.stack([ddx.sum(axis=1).reshape(b, k, h, w) * sx,
                              ddy.sum(axis=1).reshape(b, k, h, w) * sy], axis=2)
            _accumulate(flow, gflow.reshape(b, 2 * k, h, w).astype(flow.dtype))
    out._backward = _backward
    return out


def weighted_group_sum(samples: Tensor, weights: Tensor) -> Tensor:
    """Combine K channel groups of `samples` with per-pixel weights (b, K, h, w)."""
    b, kc, h, w = samples.dims
    k = weights.dims[1]
    if weights.dims != (b, k, h, w) or kc % k:
        raise ShapeError(f"weighted_group_sum: samples {samples.dims} vs weights {weights.dims}")
    c = kc // k
    s = samples.data.reshape(b, k, c, h, w)
    wt = weights.data[:, :, None]
    out = _make((s * wt).sum(axis=1), (samples, weights), 'weighted_sum')

    def _backward():
        g = out.grad[:, None]
        _accumulate(samples, (g * wt).reshape(b, kc, h, w))
        _accumulate(weights, (g * s).sum(axis=2))
    out._backward = _backward
    return out


def bilinear_sample(x: Tensor, flow: FlowLike) -> Tensor:
    """Single-flow warp: out(p) = x(p + o_p)."""
    flow = _offsets(flow)
    if flow.dims[1] != 2:
        raise ShapeError(f"bilinear_sample takes a 2-channel flow, got {flow.dims}")
    return deform_sample(x, flow)


def attention_weights(attn: AttnLike) -> Tensor:
    logits = _logits(attn)
    return softmax_groups(logits, logits.dims[1])


def daw_warp(x: Tensor, flow: FlowLike, attn: AttnLike) -> Tensor:
    """Deformable attention warp: softmax(attn)-weighted sum of K bilinear samples."""
    flow = _offsets(flow)
    logits = _logits(attn)
    if flow.dims[1] != 2 * logits.dims[1]:
        raise ShapeError(f"Flow {flow.dims} carries {flow.dims[1] // 2} samples, attention {logits.dims} carries {logits.dims[1]}")
    if logits.dims[0] != x.dims[0] or logits.dims[2:] != x.dims[2:]:
        raise ShapeError(f"Attention {logits.dims} does not match features {x.dims}")
    return weighted_group_sum(deform_sample(x, flow), attention_weights(logits))


def upsample_flow(flow: FlowLike) -> Tensor:
    """2x bilinear upsampling; normalized offsets keep their values."""
    return upsample_bilinear2x(_offsets(flow))


def upsample_attention(attn: AttnLike) -> Tensor:
    return upsample_bilinear2x(_logits(attn))


def merge_weights(attn_r: AttnLike, attn_s: AttnLike) -> Tensor:
    """Joint softmax over the 2K logits of both streams."""
    logits = concat_channels([_logits(attn_r), _logits(attn_s)])
    return softmax_groups(logits, logits.dims[1])


def merge_two_streams(x_r: Tensor, x_s: Tensor, flow_r: FlowLike, flow_s: FlowLike,
                      attn_r: AttnLike, attn_s: AttnLike) -> Tensor:
    """Joint-softmax merge of K self-stream samples of x_r and K cross-stream samples of x_s."""
    flow_r, flow_s = _offsets(flow_r), _offsets(flow_s)
    if x_r.dims != x_s.dims:
        raise ShapeError(f"Stream features differ: {x_r.dims} vs {x_s.dims}")
    if flow_r.dims != flow_s.dims or _logits(attn_r).dims != _logits(attn_s).dims:
        raise ShapeError(f"Stream flows/attention differ: {flow_r.dims} vs {flow_s.dims}")
    if flow_r.dims[1] != 2 * _logits(attn_r).dims[1]:
        raise ShapeError(f"Flow {flow_r.dims} and attention {_logits(attn_r).dims} disagree on K")
    samples = concat_channels([deform_sample(x_r, flow_r), deform_sample(x_s, flow_s)])
    return weighted_group_sum(samples, merge_weights(attn_r, attn_s))


def split_streams(t: Tensor, sizes: Tuple[int, ...]):
    """Split channels into consecutive blocks of the given sizes."""
    if sum(sizes) != t.dims[1]:
        raise ShapeError(f"Cannot split {t.dims} into channel blocks {sizes}")
    parts, start = [], 0
    for size in sizes:
        parts.append(slice_channels(t, start, start + size))
        start += size
    return parts
