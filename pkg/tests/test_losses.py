"""
Tests for the multi-scale training objective
"""

import numpy as np
import pytest

from daflow.errors import ConfigError, ContractError, ShapeError
from daflow.losses import (
    LossWeights,
    PerceptualExtractor,
    l1_loss,
    level_factor,
    perceptual_loss,
    scale_loss,
    style_loss,
    total_loss,
)
from daflow.tensor_core import Tensor, precision


def _const(value, dims):
    return Tensor(np.full(dims, value))


class TestLossTerms:
    """Individual loss components"""

    @pytest.fixture
    def extractor(self):
        return PerceptualExtractor(seed=3, channels=[4, 4, 6, 6, 8], min_size=8)

    def test_l1_is_mean_absolute_difference(self):
        out = Tensor(np.array([[[[0.0, 1.0], [2.0, 3.0]]]]))
        target = Tensor(np.array([[[[1.0, 1.0], [0.0, 3.0]]]]))
        assert l1_loss(out, target).item() == pytest.approx(0.75)

    def test_l1_shape_mismatch(self):
        with pytest.raises(ShapeError):
            l1_loss(_const(0.0, (1, 3, 4, 4)), _const(0.0, (1, 3, 4, 2)))

    def test_identical_images_cost_nothing(self, extractor):
        rng = np.random.default_rng(0)
        x = Tensor(rng.uniform(0, 1, (1, 3, 8, 8)).astype(np.float32))
        assert perceptual_loss(x, x, extractor).item() == 0.0
        assert style_loss(x, x, extractor).item() == 0.0

    def test_perceptual_matches_straight_line_reimplementation(self):
        rng = np.random.default_rng(1)
        with precision('f64'):
            ext = PerceptualExtractor(seed=3, channels=[4, 4, 6, 6, 8], min_size=8)
            a = rng.uniform(0, 1, (1, 3, 8, 8))
            b = rng.uniform(0, 1, (1, 3, 8, 8))
            value = perceptual_loss(Tensor(a), Tensor(b), ext).item()

        def features(x):
            taps = []
            for conv in ext.convs:
                w, bias, s = conv.weight.data, conv.bias.data[0, :, 0, 0], conv.stride
                xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
                oh = (x.shape[1] - 1) // s + 1
                ow = (x.shape[2] - 1) // s + 1
                y = np.zeros((w.shape[0], oh, ow))
                for o in range(w.shape[0]):
                    for i in range(oh):
                        for j in range(ow):
                            y[o, i, j] = np.sum(xp[:, i * s:i * s + 3, j * s:j * s + 3] * w[o]) + bias[o]
                x = np.where(y >= 0, y, 0.1 * y)
                taps.append(x)
            return taps

        expected = sum(np.mean(np.abs(fa - fb)) for fa, fb in zip(features(a[0]), features(b[0])))
        assert value == pytest.approx(expected, abs=1e-6)

    def test_extractor_rejects_small_inputs(self, extractor):
        with pytest.raises(ConfigError):
            extractor.taps(_const(0.5, (1, 3, 4, 4)))

    def test_scale_loss_skips_perceptual_below_min_size(self, extractor):
        parts = scale_loss(_const(0.2, (1, 3, 4, 4)), _const(0.0, (1, 3, 4, 4)), LossWeights(), extractor)
        assert set(parts) == {'l1'}
        parts = scale_loss(_const(0.2, (1, 3, 8, 8)), _const(0.0, (1, 3, 8, 8)), LossWeights(), extractor)
        assert set(parts) == {'l1', 'prec', 'style'}

    def test_negative_weights_rejected(self):
        with pytest.raises(ConfigError):
            LossWeights(l1=1.0, prec=-1.0, style=0.0)

    def test_extractor_save_and_load(self, extractor, tmp_path):
        extractor.save(tmp_path / 'vgg')
        loaded = PerceptualExtractor.load(tmp_path / 'vgg')
        assert loaded.strides == extractor.strides
        x = _const(0.3, (1, 3, 8, 8))
        np.testing.assert_array_equal(loaded.taps(x)[-1].data, extractor.taps(x)[-1].data)


class TestTotalLoss:
    """Level weighting across previews and the final output"""

    def test_two_level_weighting(self):
        previews = [_const(0.5, (1, 3, 2, 2)), _const(0.25, (1, 3, 4, 4))]
        targets = [_const(0.0, (1, 3, 2, 2)), _const(0.0, (1, 3, 4, 4))]
        loss, parts = total_loss(previews, targets, LossWeights(1.0, 0.0, 0.0))
        assert loss.item() == pytest.approx(1.75)
        assert parts == pytest.approx({'l1/1': 1.0, 'l1/2': 0.75})

    def test_alternative_weighting_drops_the_coarsest_scale(self):
        previews = [_const(0.5, (1, 3, 2, 2)), _const(0.25, (1, 3, 4, 4))]
        targets = [_const(0.0, (1, 3, 2, 2)), _const(0.0, (1, 3, 4, 4))]
        loss, _ = total_loss(previews, targets, LossWeights(1.0, 0.0, 0.0), weighting='n_minus_1')
        assert loss.item() == pytest.approx(0.25)

    @pytest.mark.parametrize("level", [1, 2, 3])
    def test_loss_grows_with_any_one_level_error(self, level):
        dims = [(1, 3, 2, 2), (1, 3, 4, 4), (1, 3, 8, 8)]
        targets = [_const(0.0, d) for d in dims]
        losses, parts = [], []
        for error in (0.0, 0.1, 0.2, 0.4, 0.8):
            previews = [_const(error if n == level else 0.3, d) for n, d in enumerate(dims, start=1)]
            loss, components = total_loss(previews, targets, LossWeights(1.0, 0.0, 0.0))
            assert loss.item() == pytest.approx(sum(components.values()))
            losses.append(loss.item())
            parts.append(components[f'l1/{level}'])
        assert all(b >= a for a, b in zip(parts, parts[1:]))
        assert all(b >= a for a, b in zip(losses, losses[1:]))
        assert losses[-1] > losses[0]

    def test_level_factor(self):
        assert [level_factor(n) for n in (1, 2, 3)] == [2.0, 3.0, 4.0]
        with pytest.raises(ConfigError):
            level_factor(1, 'squared')

    def test_count_mismatch(self):
        with pytest.raises(ContractError):
            total_loss([_const(0.0, (1, 3, 2, 2))], [], LossWeights())
        with pytest.raises(ContractError):
            total_loss([], [], LossWeights())
