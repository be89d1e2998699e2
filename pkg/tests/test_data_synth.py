"""
Tests for synthetic pair generation, pose rendering, upper-body masking and dataset loading
"""

import json
import threading

import numpy as np
import pytest

from daflow.config import MASK_FILL
from daflow.data_synth import (
    CANONICAL_KEYPOINTS,
    MAX_DISPLACEMENT,
    BatchLoader,
    SyntheticSource,
    collate,
    generate_pair,
    load_entry,
    load_manifest,
    mask_upper_body,
    max_displacement_px,
    read_keypoints,
    render_body,
    render_garment,
    render_keypoint_heatmaps,
    warp_image,
    write_dataset,
)
from daflow.errors import DataError


class TestGeneratePair:
    """Procedural pairs with known ground-truth flow"""

    def test_same_seed_same_pair(self):
        a, b = generate_pair(11), generate_pair(11)
        for name in ('garment', 'person', 'person_masked', 'keypoints', 'flow'):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert a.mask_box == b.mask_box

    def test_different_seeds_differ(self):
        assert not np.array_equal(generate_pair(1).target, generate_pair(2).target)

    def test_shapes_and_range(self):
        pair = generate_pair(3, dims=(32, 24))
        assert pair.dims == (32, 24)
        assert pair.garment.shape == (3, 32, 24) and pair.flow.shape == (2, 32, 24)
        assert pair.keypoints.shape == (18, 3)
        assert pair.target.min() >= 0.0 and pair.target.max() <= 1.0

    def test_identity_warp_has_zero_flow(self):
        pair = generate_pair(5, identity_warp=True)
        np.testing.assert_allclose(pair.flow, 0.0, atol=1e-6)
        np.testing.assert_allclose(pair.warped_alpha, pair.garment_alpha, atol=1e-6)

    @pytest.mark.parametrize('seed', [0, 1, 2, 3])
    def test_oracle_warp_reproduces_garment_region(self, seed):
        pair = generate_pair(seed, difficulty='hard')
        warped = warp_image(pair.garment, pair.flow)
        region = pair.warped_alpha > 0.999
        assert region.sum() > 0
        assert np.abs(warped - pair.target)[:, region].mean() < 1e-3

    @pytest.mark.parametrize('seed', [0, 1, 2, 3])
    def test_displacement_is_bounded(self, seed):
        pair = generate_pair(seed, difficulty='hard')
        w = pair.dims[1]
        assert max_displacement_px(pair.flow, pair.warped_alpha > 0) <= MAX_DISPLACEMENT * w + 1e-3

    def test_masked_region_is_gray(self):
        pair = generate_pair(9)
        y0, y1, x0, x1 = pair.mask_box
        np.testing.assert_allclose(pair.person_masked[:, y0:y1 + 1, x0:x1 + 1], MASK_FILL)

    def test_unknown_difficulty(self):
        with pytest.raises(DataError):
            generate_pair(0, difficulty='brutal')


class TestPoseAndMask:
    """Keypoint heatmaps and the upper-body mask"""

    def test_heatmap_mass_matches_gaussian_integral(self):
        keypoints = np.zeros((18, 3))
        keypoints[0] = [24, 32, 1]
        heat = render_keypoint_heatmaps(keypoints, (64, 48), sigma=2.0).data[0]
        assert heat.shape == (18, 64, 48)
        assert heat[0].sum() == pytest.approx(2 * np.pi * 4.0, rel=0.01)
        assert heat[0].max() == pytest.approx(1.0)
        np.testing.assert_array_equal(heat[1:], 0.0)

    def test_heatmap_needs_positive_sigma(self):
        with pytest.raises(DataError):
            render_keypoint_heatmaps(np.zeros((18, 3)), (8, 8), sigma=0.0)

    def test_mask_covers_torso_with_margin(self):
        person = np.zeros((3, 64, 48), dtype=np.float32)
        keypoints = np.zeros((18, 3))
        keypoints[[2, 5, 8, 11]] = [[15, 20, 1], [33, 20, 1], [17, 40, 1], [31, 40, 1]]
        masked, (y0, y1, x0, x1) = mask_upper_body(person, keypoints, margin=3)
        assert (y0, y1, x0, x1) == (17, 43, 12, 36)
        np.testing.assert_allclose(masked[:, y0:y1 + 1, x0:x1 + 1], MASK_FILL)
        assert masked[:, :y0].sum() == 0 and masked[:, :, x1 + 1:].sum() == 0
        assert person.sum() == 0

    def test_mask_needs_visible_torso(self):
        keypoints = np.zeros((18, 3))
        keypoints[[2, 5, 8]] = [[15, 20, 1], [33, 20, 1], [17, 40, 1]]
        with pytest.raises(DataError):
            mask_upper_body(np.zeros((3, 64, 48)), keypoints)


class TestSilhouette:
    """Rasterized body parts and garment outline"""

    @pytest.fixture
    def keypoints(self):
        h, w = 64, 48
        px = np.stack([(CANONICAL_KEYPOINTS[:, 0] + 1) * (w - 1) / 2,
                       (CANONICAL_KEYPOINTS[:, 1] + 1) * (h - 1) / 2], axis=1)
        return np.concatenate([px, np.ones((18, 1))], axis=1)

    def test_body_parts_get_their_colours(self, keypoints):
        rng = np.random.default_rng(0)
        background = rng.uniform(0.75, 0.95, size=3)
        skin = rng.uniform([0.45, 0.3, 0.2], [0.9, 0.75, 0.6])
        legs = rng.uniform(0.1, 0.4, size=3)
        img = render_body(np.random.default_rng(0), keypoints, (64, 48))
        torso = np.rint(keypoints[[2, 5, 8, 11], :2].mean(axis=0)).astype(int)
        head = np.rint(keypoints[0, :2]).astype(int)
        shin = np.rint((keypoints[9, :2] + keypoints[10, :2]) / 2).astype(int)
        np.testing.assert_allclose(img[:, torso[1], torso[0]], skin)
        np.testing.assert_allclose(img[:, head[1], head[0]], skin)
        np.testing.assert_allclose(img[:, shin[1], shin[0]], legs)
        np.testing.assert_allclose(img[:, 0, 0], background)
        np.testing.assert_allclose(img[:, 63, 47], background)

    def test_garment_outline(self):
        rgb, alpha = render_garment(np.random.default_rng(1), (64, 48))
        assert alpha[32, 24] == 1.0
        assert alpha[0, 0] == alpha[63, 47] == alpha[2, 24] == 0.0
        np.testing.assert_allclose(rgb[:, 0, 0], 1.0)
        assert set(np.unique(alpha)) == {0.0, 1.0}


class TestManifest:
    """Dataset discovery and validation"""

    @pytest.fixture
    def dataset(self, tmp_path):
        pairs = [generate_pair(s, dims=(16, 12)) for s in range(3)]
        return write_dataset(tmp_path / 'data', pairs)

    def test_written_dataset_is_fully_valid(self, dataset):
        manifest = load_manifest(dataset)
        assert len(manifest) == 3
        assert manifest.report.empty
        pair = load_entry(manifest, 0, dims=(16, 12))
        assert pair.dims == (16, 12)
        assert pair.person_masked.shape == (3, 16, 12)

    def test_corrupt_image_is_excluded_and_reported(self, dataset):
        (dataset / 'cloth' / '00001_1.png').write_bytes(b'not a png at all')
        manifest = load_manifest(dataset)
        assert len(manifest) == 2
        assert manifest.report['item'].tolist() == ['00001_0.png']
        assert manifest.report['problem'].str.startswith('corrupt image').all()

    def test_missing_pose_is_reported(self, dataset):
        (dataset / 'pose' / '00002_0_keypoints.json').unlink()
        manifest = load_manifest(dataset)
        assert len(manifest) == 2
        assert manifest.report['problem'].tolist() == ['missing file']

    def test_strict_mode_raises(self, dataset):
        (dataset / 'image' / '00000_0.png').unlink()
        with pytest.raises(DataError):
            load_manifest(dataset, strict=True)

    def test_empty_directory(self, tmp_path):
        manifest = load_manifest(tmp_path)
        assert len(manifest) == 0

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError):
            load_manifest(tmp_path / 'nowhere')

    def test_keypoint_formats(self, tmp_path):
        flat = list(np.arange(54, dtype=float))
        (tmp_path / 'flat.json').write_text(json.dumps(flat))
        (tmp_path / 'openpose.json').write_text(json.dumps({'people': [{'pose_keypoints_2d': flat}]}))
        (tmp_path / 'short.json').write_text(json.dumps(flat[:10]))
        np.testing.assert_array_equal(read_keypoints(tmp_path / 'flat.json'),
                                      read_keypoints(tmp_path / 'openpose.json'))
        with pytest.raises(DataError):
            read_keypoints(tmp_path / 'short.json')

    def test_ragged_pose_file_is_reported(self, tmp_path):
        root = write_dataset(tmp_path / 'pair', [generate_pair(s, dims=(16, 12)) for s in range(2)])
        (root / 'pose' / '00001_0_keypoints.json').write_text(json.dumps([[1, 2, 3], [4, 5]]))
        manifest = load_manifest(root)
        assert len(manifest) == 1
        assert manifest.report['item'].tolist() == ['00001_0.png']
        assert manifest.report['problem'].str.contains('not a numeric array').all()
        with pytest.raises(DataError):
            read_keypoints(root / 'pose' / '00001_0_keypoints.json')


class TestBatching:
    """Seeded batch order and collation"""

    @pytest.fixture
    def source(self):
        return SyntheticSource(list(range(5)), dims=(16, 12))

    def test_collate_builds_heatmap_channels(self, source):
        batch = collate([source[0], source[1]], sigma=1.0)
        assert batch.person_masked.dims == (2, 3, 16, 12)
        assert batch.keypoints.dims == (2, 18, 16, 12)
        assert batch.indices == [0, 1]

    def test_collate_empty(self):
        with pytest.raises(DataError):
            collate([])

    def test_order_is_a_function_of_seed_and_epoch(self, source):
        loader = BatchLoader(source, batch_size=2, seed=4)
        np.testing.assert_array_equal(loader.order(3), BatchLoader(source, 2, seed=4).order(3))
        assert sorted(loader.order(0)) == list(range(5))

    def test_epoch_yields_every_pair_once(self, source):
        loader = BatchLoader(source, batch_size=2, seed=1, prefetch=1)
        batches = list(loader.epoch(0))
        assert len(batches) == len(loader) == 3
        seen = [i for b in batches for i in b.indices]
        assert sorted(seen) == list(range(5))

    def test_worker_errors_surface(self):
        loader = BatchLoader(SyntheticSource([0], difficulty='brutal'), batch_size=1)
        with pytest.raises(DataError):
            list(loader.epoch(0))

    def test_start_skips_leading_batches(self, source):
        loader = BatchLoader(source, batch_size=2, seed=1)
        full = [b.indices for b in loader.epoch(2)]
        assert [b.indices for b in loader.epoch(2, start=1)] == full[1:]
        assert list(loader.epoch(2, start=3)) == []

    def test_closing_early_stops_the_worker(self, source):
        loader = BatchLoader(source, batch_size=1, seed=0, prefetch=1)
        before = threading.active_count()
        for epoch in range(3):
            batches = loader.epoch(epoch)
            next(batches)
            batches.close()
            assert threading.active_count() == before
