"""Finite-difference verification of every differentiable operation.

Each check builds a small random instance in float64, reduces the op output
to a scalar with a fixed random weighting, and compares analytic gradients with
central differences at sampled coordinates. Coordinates whose stencil straddles
a kink (detected by disagreement between two step sizes) are skipped.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np
import pandas as pd

from daflow.errors import ConfigError
from daflow.losses import LossWeights, PerceptualExtractor, l1_loss, perceptual_loss, style_loss, total_loss
from daflow.tensor_core import (
    Tensor,
    area_downsample,
    backward,
    concat_channels,
    conv2d,
    gram,
    leaky_relu,
    mul,
    precision,
    resize_bilinear,
    sigmoid,
    softmax_groups,
    sum_all,
    upsample_bilinear2x,
)
from daflow.warp_ops import bilinear_sample, daw_warp, merge_two_streams, upsample_flow

EPS = 1e-4
TOLERANCE = 1e-4
SCALE_FLOOR = 1e-3
KINK_TOLERANCE = 1e-6

Builder = Callable[[np.random.Generator], Tuple[Callable[[Dict[str, Tensor]], Tensor], Dict[str, np.ndarray]]]


@dataclass
class GradCheck:
    name: str
    module: str
    build: Builder


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return sum_all(mul(out, Tensor(weights)))


def _reduce(op: Callable[..., Tensor], rng, out_dims):
    weights = rng.standard_normal(out_dims)
    return lambda t: _weighted_sum(op(t), weights)


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _flow(rng, b, k, h, w, reach=1.5):
    """Offsets whose pixel-space targets sit at least 0.1 px from grid lines."""
    whole = rng.integers(-int(reach), int(reach) + 1, size=(b, k, 2, h, w))
    frac = rng.uniform(0.1, 0.9, size=(b, k, 2, h, w))
    px = whole + frac
    scale = np.array([(w - 1) / 2.0, (h - 1) / 2.0])[None, None, :, None, None]
    return (px / scale).reshape(b, 2 * k, h, w)


################################################
# instances
################################################

def _conv(stride, padding):
    def build(rng):
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.3
        b = rng.standard_normal((1, 4, 1, 1))
        oh = (8 + 2 * padding - 3) // stride + 1
        fn = _reduce(lambda t: conv2d(t['x'], t['w'], t['b'], stride=stride, padding=padding),
                     rng, (2, 4, oh, oh))
        return fn, {'x': x, 'w': w, 'b': b}
    return build


def _unary(op, shape, out_shape=None, positive_margin=False):
    def build(rng):
        x = _away_from_zero(rng, shape) if positive_margin else rng.standard_normal(shape)
        return _reduce(lambda t: op(t['x']), rng, out_shape or shape), {'x': x}
    return build


def _concat(rng):
    a = rng.standard_normal((1, 2, 4, 4))
    b = rng.standard_normal((1, 3, 4, 4))
    return _reduce(lambda t: concat_channels([t['a'], t['b']]), rng, (1, 5, 4, 4)), {'a': a, 'b': b}


def _bilinear(rng):
    x = rng.standard_normal((1, 2, 5, 4))
    flow = _flow(rng, 1, 1, 5, 4)
    return _reduce(lambda t: bilinear_sample(t['x'], t['flow']), rng, (1, 2, 5, 4)), {'x': x, 'flow': flow}


def _daw(rng):
    k = 3
    x = rng.standard_normal((1, 2, 5, 4))
    flow = _flow(rng, 1, k, 5, 4)
    attn = rng.standard_normal((1, k, 5, 4))
    fn = _reduce(lambda t: daw_warp(t['x'], t['flow'], t['attn']), rng, (1, 2, 5, 4))
    return fn, {'x': x, 'flow': flow, 'attn': attn}


def _merge(rng):
    k = 2
    inputs = {
        'x_r': rng.standard_normal((1, 2, 3, 3)),
        'x_s': rng.standard_normal((1, 2, 3, 3)),
        'flow_r': _flow(rng, 1, k, 3, 3, reach=1),
        'flow_s': _flow(rng, 1, k, 3, 3, reach=1),
        'attn_r': rng.standard_normal((1, k, 3, 3)),
        'attn_s': rng.standard_normal((1, k, 3, 3)),
    }
    fn = _reduce(lambda t: merge_two_streams(t['x_r'], t['x_s'], t['flow_r'], t['flow_s'],
                                             t['attn_r'], t['attn_s']), rng, (1, 2, 3, 3))
    return fn, inputs


def _extractor():
    return PerceptualExtractor(seed=3, channels=[4, 4, 6, 6, 8], min_size=8)


def _loss_pair(rng, shape=(1, 3, 8, 8)):
    target = rng.uniform(0, 1, size=shape)
    out = target + _away_from_zero(rng, shape, 0.05) * 0.3
    return out, target


def _l1(rng):
    out, target = _loss_pair(rng)
    return (lambda t: l1_loss(t['out'], t['target'])), {'out': out, 'target': target}


def _perceptual(rng):
    out, target = _loss_pair(rng)
    ext = _extractor()
    return (lambda t: perceptual_loss(t['out'], Tensor(target), ext)), {'out': out}


def _style(rng):
    out, target = _loss_pair(rng)
    ext = _extractor()
    return (lambda t: style_loss(t['out'], Tensor(target), ext)), {'out': out}


def _total(rng):
    coarse, coarse_t = _loss_pair(rng, (1, 3, 4, 4))
    fine, fine_t = _loss_pair(rng, (1, 3, 8, 8))
    ext = _extractor()
    weights = LossWeights(1.0, 1.0, 10.0)

    def fn(t):
        loss, _ = total_loss([t['coarse'], t['fine']], [Tensor(coarse_t), Tensor(fine_t)], weights, ext)
        return loss
    return fn, {'coarse': coarse, 'fine': fine}


CHECKS: List[GradCheck] = [
    GradCheck('conv2d', 'tensor_core', _conv(1, 1)),
    GradCheck('conv2d_stride2', 'tensor_core', _conv(2, 1)),
    GradCheck('leaky_relu', 'tensor_core', _unary(lambda x: leaky_relu(x, 0.1), (1, 2, 4, 4), positive_margin=True)),
    GradCheck('sigmoid', 'tensor_core', _unary(sigmoid, (1, 2, 4, 4))),
    GradCheck('upsample_bilinear2x', 'tensor_core', _unary(upsample_bilinear2x, (1, 2, 3, 3), (1, 2, 6, 6))),
    GradCheck('resize_bilinear', 'tensor_core', _unary(lambda x: resize_bilinear(x, 5, 7), (1, 2, 3, 4), (1, 2, 5, 7))),
    GradCheck('area_downsample', 'tensor_core', _unary(lambda x: area_downsample(x, 2), (1, 2, 4, 6), (1, 2, 2, 3))),
    GradCheck('concat_channels', 'tensor_core', _concat),
    GradCheck('softmax_groups', 'tensor_core', _unary(lambda x: softmax_groups(x, 3), (1, 6, 2, 2))),
    GradCheck('gram', 'tensor_core', _unary(gram, (2, 3, 4, 4), (2, 1, 3, 3))),
    GradCheck('bilinear_sample', 'warp_ops', _bilinear),
    GradCheck('daw_warp', 'warp_ops', _daw),
    GradCheck('upsample_flow', 'warp_ops', _unary(upsample_flow, (1, 4, 3, 2), (1, 4, 6, 4))),
    GradCheck('merge_two_streams', 'warp_ops', _merge),
    GradCheck('l1_loss', 'losses', _l1),
    GradCheck('perceptual_loss', 'losses', _perceptual),
    GradCheck('style_loss', 'losses', _style),
    GradCheck('total_loss', 'losses', _total),
]
MODULES = sorted({c.module for c in CHECKS})


################################################
# runner
################################################

def _evaluate(fn, inputs: Dict[str, np.ndarray]) -> float:
    return fn({k: Tensor(v) for k, v in inputs.items()}).item()


def _central(fn, inputs, key, flat_index, eps):
    arr = inputs[key]
    original = arr.flat[flat_index]
    arr.flat[flat_index] = original + eps
    plus = _evaluate(fn, inputs)
    arr.flat[flat_index] = original - eps
    minus = _evaluate(fn, inputs)
    arr.flat[flat_index] = original
    return (plus - minus) / (2 * eps)


def run_check(check: GradCheck, seed: int = 0, samples: int = 6, corrupt: bool = False) -> List[dict]:
    """Rows (one per input) with the worst relative error over sampled coordinates."""
    rng = np.random.default_rng([seed, sum(map(ord, check.name))])
    with precision('f64'):
        fn, inputs = check.build(rng)
        inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
        leaves = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
        backward(fn(leaves))
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
        if corrupt:
            first = next(iter(analytic))
            analytic[first] = analytic[first] * 1.5 + 1e-2

        rows = []
        for key, arr in inputs.items():
            worst, checked, skipped = 0.0, 0, 0
            for idx in rng.permutation(arr.size):
                if checked >= samples:
                    break
                numeric = _central(fn, inputs, key, int(idx), EPS)
                fine = _central(fn, inputs, key, int(idx), EPS / 10)
                if abs(numeric - fine) > KINK_TOLERANCE * max(1.0, abs(numeric)):
                    skipped += 1
                    continue
                a = float(analytic[key].flat[int(idx)])
                err = abs(a - numeric) / max(abs(a), abs(numeric), SCALE_FLOOR)
                worst = max(worst, err)
                checked += 1
            rows.append({'op': check.name, 'module': check.module, 'input': key,
                         'worst_rel_err': worst, 'checked': checked, 'skipped': skipped})
    return rows


@dataclass
class GradcheckReport:
    table: pd.DataFrame
    tolerance: float = TOLERANCE

    @property
    def per_op(self) -> pd.DataFrame:
        grouped = self.table.groupby('op', sort=False).agg(
            module=('module', 'first'), worst_rel_err=('worst_rel_err', 'max'), checked=('checked', 'sum'))
        grouped['passed'] = (grouped['worst_rel_err'] < self.tolerance) & (grouped['checked'] > 0)
        return grouped.reset_index()

    @property
    def passed(self) -> bool:
        return bool(self.per_op['passed'].all())

    @property
    def failures(self) -> List[str]:
        ops = self.per_op
        return ops.loc[~ops['passed'], 'op'].tolist()


def run_suite(module: Optional[str] = None, seed: int = 0, samples: int = 6,
              corrupt: Iterable[str] = (), tolerance: float = TOLERANCE) -> GradcheckReport:
    if module is not None and module not in MODULES:
        raise ConfigError(f"Unknown gradcheck module '{module}', expected one of {MODULES}")
    corrupt = set(corrupt)
    rows = []
    for check in CHECKS:
        if module is None or check.module == module:
            rows.extend(run_check(check, seed, samples, corrupt=check.name in corrupt))
    return GradcheckReport(pd.DataFrame(rows), tolerance)
