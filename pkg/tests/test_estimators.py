"""
Tests for the pyramid extractors, flow estimators, DAFN blocks and the full try-on network
"""

from dataclasses import replace

import numpy as np
import pytest

from daflow.data_synth import mask_upper_body
from daflow.errors import ConfigError, ShapeError
from daflow.estimators import (
    SDAFN,
    DafnConfig,
    FlowEstimator,
    infer_at_resolution,
    mfe_forward,
    sdafn_forward,
    shrink_to,
)
from daflow.losses import l1_loss
from daflow.tensor_core import Tensor, backward
from daflow.warp_ops import upsample_flow


class TestDafnConfig:
    """Architecture validation"""

    def test_full_size_defaults_validate(self):
        config = DafnConfig().validate()
        assert (config.levels, config.samples) == (5, 6)
        assert config.mfe_kernels == [3, 7, 7, 7]

    def test_dims_must_divide_pyramid(self, tiny_config):
        with pytest.raises(ConfigError):
            tiny_config.check_dims(18, 12)

    def test_rejects_even_kernels(self, tiny_config):
        with pytest.raises(ConfigError):
            replace(tiny_config, mfe_kernels=[3, 4, 3, 3]).validate()

    def test_concat_merge_needs_codec(self, tiny_config):
        with pytest.raises(ConfigError):
            replace(tiny_config, merge_mode='concat', shallow_codec=False).validate()


class TestFlowEstimator:
    """Head layout and zero initialization"""

    def test_refine_head_splits_into_four_parts(self, tiny_config):
        rng = np.random.default_rng(0)
        est = FlowEstimator(8, 'refine', 3, 2, tiny_config, rng)
        assert est.out_channels == 18
        parts = mfe_forward(est, Tensor(rng.standard_normal((1, 8, 4, 3))))
        assert [p.dims[1] for p in parts] == [6, 6, 3, 3]
        for p in parts:
            np.testing.assert_array_equal(p.data, 0.0)

    def test_rejects_wrong_input_channels(self, tiny_config):
        est = FlowEstimator(4, 'self', 2, 1, tiny_config, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            est(Tensor(np.zeros((1, 5, 4, 4))))

    def test_unknown_role(self, tiny_config):
        with pytest.raises(ConfigError):
            FlowEstimator(4, 'sideways', 2, 1, tiny_config, np.random.default_rng(0))


class TestSDAFN:
    """End-to-end forward behaviour of the network"""

    @pytest.fixture
    def model(self, tiny_config):
        return SDAFN(tiny_config, seed=0)

    def test_pyramid_is_coarsest_first(self, model, tiny_inputs):
        _, _, garment = tiny_inputs
        levels = model.extract_pyramid(garment, 'source')
        assert [lv.dims for lv in levels] == [(1, 4, 4, 3), (1, 4, 8, 6)]

    def test_reference_branch_checks_channels(self, model, tiny_inputs):
        person, _, _ = tiny_inputs
        with pytest.raises(ShapeError):
            model.extract_pyramid(person, 'reference')

    def test_output_shape_and_range(self, model, tiny_inputs):
        result = model(*tiny_inputs)
        assert result.output.dims == (1, 3, 16, 12)
        assert result.output.data.min() >= 0.0 and result.output.data.max() <= 1.0
        assert [p.dims for p in result.previews] == [(1, 3, 4, 3), (1, 3, 8, 6)]
        assert len(result.states) == 2

    def test_untrained_network_averages_the_streams(self, model, tiny_inputs):
        person, keypoints, garment = tiny_inputs
        result = model(person, keypoints, garment)
        for state in result.states:
            np.testing.assert_array_equal(state.flow_s.data, 0.0)
            np.testing.assert_array_equal(state.flow_r.data, 0.0)
        mixed = Tensor(0.5 * (model.encoder(person).data + model.encoder(garment).data))
        np.testing.assert_allclose(result.output.data, model.decoder(mixed).data, atol=1e-5)

    def test_previews_average_downsampled_inputs_at_init(self, model, tiny_inputs):
        person, keypoints, garment = tiny_inputs
        result = model(person, keypoints, garment)
        coarse = result.previews[0].data
        expected = 0.5 * (person.data + garment.data).reshape(1, 3, 4, 4, 3, 4).mean(axis=(3, 5))
        np.testing.assert_allclose(coarse, expected, atol=1e-5)

    def test_hooks_see_every_attention_map(self, model, tiny_inputs):
        seen = []
        model.hooks.append(lambda level, name, t: seen.append((level, name)))
        model(*tiny_inputs)
        names = ['self_attn_dot', 'cross_attn_dot', 'refine_attn_s', 'refine_attn_r']
        assert seen == [(lv, n) for lv in (1, 2) for n in names]

    def test_single_branch_has_fewer_parameters(self, tiny_config, tiny_inputs):
        full = SDAFN(tiny_config, seed=0)
        single = SDAFN(replace(tiny_config, single_branch=True), seed=0)
        assert single.num_parameters() < full.num_parameters()
        result = single(*tiny_inputs)
        assert result.states[-1].flow_r is None
        assert result.output.dims == (1, 3, 16, 12)

    def test_without_cascade_only_finest_level_runs(self, tiny_config, tiny_inputs):
        model = SDAFN(replace(tiny_config, cascade=False), seed=0)
        assert len(model.dafn) == 1
        result = model(*tiny_inputs)
        assert [s.dims for s in result.states] == [(8, 6)]

    def test_without_codec_output_is_raw_merge(self, tiny_config, tiny_inputs):
        person, keypoints, garment = tiny_inputs
        model = SDAFN(replace(tiny_config, shallow_codec=False), seed=0)
        out = model(person, keypoints, garment, with_previews=False).output.data
        np.testing.assert_allclose(out, 0.5 * (person.data + garment.data), atol=1e-5)

    def test_concat_merge_decodes_both_streams(self, tiny_config, tiny_inputs):
        model = SDAFN(replace(tiny_config, merge_mode='concat'), seed=0)
        assert model.decoder.conv1.weight.dims[1] == 2 * tiny_config.shallow_channels[1]
        assert model(*tiny_inputs).output.dims == (1, 3, 16, 12)

    def test_content_under_the_mask_is_ignored(self, model):
        rng = np.random.default_rng(7)
        person = rng.uniform(0, 1, (3, 16, 12)).astype(np.float32)
        keypoints = np.zeros((18, 3), dtype=np.float32)
        keypoints[[2, 5, 8, 11]] = [[3, 4, 1], [8, 4, 1], [4, 10, 1], [7, 10, 1]]
        masked_a, (y0, y1, x0, x1) = mask_upper_body(person, keypoints)
        altered = person.copy()
        altered[:, y0:y1 + 1, x0:x1 + 1] = rng.uniform(0, 1, (3, y1 - y0 + 1, x1 - x0 + 1))
        masked_b, _ = mask_upper_body(altered, keypoints)
        heat = Tensor(rng.uniform(0, 1, (1, 18, 16, 12)).astype(np.float32))
        garment = Tensor(rng.uniform(0, 1, (1, 3, 16, 12)).astype(np.float32))
        out_a = model(Tensor(masked_a[None]), heat, garment).output.data
        out_b = model(Tensor(masked_b[None]), heat, garment).output.data
        np.testing.assert_array_equal(out_a, out_b)

    def test_gradients_reach_the_flow_heads(self, model, tiny_inputs):
        person, keypoints, garment = tiny_inputs
        target = Tensor(np.full((1, 3, 16, 12), 0.3, dtype=np.float32))
        model.zero_grad()
        backward(l1_loss(model(person, keypoints, garment).output, target))
        assert np.abs(model.decoder.conv2.weight.grad).sum() > 0
        assert np.abs(model.dafn[-1].refine_mfe.head.weight.grad).sum() > 0

    def test_parameter_names_are_unique_paths(self, model):
        names = [name for name, _ in model.named_parameters()]
        assert len(names) == len(set(names))
        assert all(p.name == name for name, p in model.named_parameters())
        assert 'dafn.0.cross_mfe.head.weight' in names


def _randomize_heads(model, seed, scale=0.05):
    """Give every flow head random weights so offsets and logits are nonzero."""
    rng = np.random.default_rng(seed)
    for block in model.dafn:
        for est in (getattr(block, 'self_mfe', None), block.cross_mfe, block.refine_mfe):
            if est is None:
                continue
            weight = est.head.weight
            weight.data[...] = (scale * rng.standard_normal(weight.data.shape)).astype(weight.data.dtype)


class TestCascade:
    """Coarse-to-fine accumulation of flows across levels"""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_fine_flow_is_upsampled_coarse_plus_residual(self, tiny_config, tiny_inputs, seed):
        model = SDAFN(tiny_config, seed=seed)
        _randomize_heads(model, seed)
        coarse, fine = model(*tiny_inputs).states
        for stream in ('s', 'r'):
            residual = getattr(fine, f'residual_{stream}').data
            assert np.abs(residual).max() > 0
            expected = upsample_flow(getattr(coarse, f'flow_{stream}')).data + residual
            np.testing.assert_array_equal(getattr(fine, f'flow_{stream}').data, expected)
        np.testing.assert_array_equal(coarse.flow_s.data, coarse.residual_s.data)

    def test_state_attention_is_the_refine_output(self, tiny_config, tiny_inputs):
        model = SDAFN(tiny_config, seed=0)
        _randomize_heads(model, 3)
        recorded = {}
        model.hooks.append(lambda level, name, t: recorded.__setitem__((level, name), t))
        result = model(*tiny_inputs)
        for state in result.states:
            assert state.attn_s is recorded[(state.level, 'refine_attn_s')]
            assert state.attn_r is recorded[(state.level, 'refine_attn_r')]

    def test_one_encoder_serves_both_streams(self, tiny_config, tiny_inputs):
        model = SDAFN(tiny_config, seed=0)
        encoder_names = [name for name, _ in model.named_parameters() if name.startswith('encoder.')]
        assert sorted(encoder_names) == ['encoder.conv1.bias', 'encoder.conv1.weight',
                                         'encoder.conv2.bias', 'encoder.conv2.weight']
        person, keypoints, _ = tiny_inputs
        out = model(person, keypoints, person, with_previews=False).output
        np.testing.assert_allclose(out.data, model.decoder(model.encoder(person)).data, atol=1e-5)

    def test_training_pass_matches_forward(self, tiny_config, tiny_inputs):
        model = SDAFN(tiny_config, seed=0)
        _randomize_heads(model, 4)
        direct = model(*tiny_inputs)
        result = sdafn_forward(model, *tiny_inputs)
        np.testing.assert_array_equal(result.output.data, direct.output.data)
        assert len(result.previews) == len(direct.previews) == 2
        for a, b in zip(result.previews, direct.previews):
            np.testing.assert_array_equal(a.data, b.data)


class TestInferAtResolution:
    """Flows estimated at training size and applied at a larger size"""

    def test_training_size_matches_forward(self, tiny_config, tiny_inputs):
        model = SDAFN(tiny_config, seed=1)
        direct = infer_at_resolution(model, *tiny_inputs, (16, 12))
        np.testing.assert_allclose(direct.data, model(*tiny_inputs).output.data, atol=1e-6)

    def test_double_size_output(self, tiny_config):
        model = SDAFN(tiny_config, seed=1)
        rng = np.random.default_rng(4)
        person = Tensor(rng.uniform(0, 1, (1, 3, 32, 24)).astype(np.float32))
        keypoints = Tensor(rng.uniform(0, 1, (1, 18, 32, 24)).astype(np.float32))
        garment = Tensor(rng.uniform(0, 1, (1, 3, 32, 24)).astype(np.float32))
        out = infer_at_resolution(model, person, keypoints, garment, (16, 12))
        assert out.dims == (1, 3, 32, 24)
        mixed = Tensor(0.5 * (model.encoder(person).data + model.encoder(garment).data))
        np.testing.assert_allclose(out.data, model.decoder(mixed).data, atol=1e-5)

    def test_nonzero_flows_are_resized_before_rendering(self, tiny_config):
        model = SDAFN(tiny_config, seed=1)
        _randomize_heads(model, 5)
        rng = np.random.default_rng(6)
        person = Tensor(rng.uniform(0, 1, (1, 3, 32, 24)).astype(np.float32))
        keypoints = Tensor(rng.uniform(0, 1, (1, 18, 32, 24)).astype(np.float32))
        garment = Tensor(rng.uniform(0, 1, (1, 3, 32, 24)).astype(np.float32))
        out = infer_at_resolution(model, person, keypoints, garment, (16, 12))

        states = model.estimate_flows(shrink_to(person, 16, 12), shrink_to(keypoints, 16, 12),
                                      shrink_to(garment, 16, 12))
        flows = SDAFN.final_flows(states[-1], 32, 24)
        assert flows['flow_s'].dims == (1, 4, 32, 24)
        assert np.abs(flows['flow_s'].data).max() > 1e-3
        np.testing.assert_allclose(out.data, model.render(person, garment, flows).data, atol=1e-6)
        mixed = Tensor(0.5 * (model.encoder(person).data + model.encoder(garment).data))
        assert np.abs(out.data - model.decoder(mixed).data).max() > 1e-4

    def test_rejects_indivisible_size(self, tiny_config, tiny_inputs):
        model = SDAFN(tiny_config, seed=1)
        person = Tensor(np.zeros((1, 3, 18, 12)))
        with pytest.raises(ConfigError):
            infer_at_resolution(model, person, Tensor(np.zeros((1, 18, 18, 12))), person, (16, 12))
