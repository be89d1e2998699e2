"""
Tests for the finite-difference gradient verification suite
"""

import pytest

from daflow.errors import ConfigError
from daflow.gradcheck import CHECKS, MODULES, run_check, run_suite


class TestGradcheck:
    """Every registered op agrees with central differences; a perturbed gradient does not"""

    @pytest.mark.parametrize('check', CHECKS, ids=[c.name for c in CHECKS])
    def test_each_op_passes(self, check):
        rows = run_check(check, seed=0, samples=4)
        assert all(r['checked'] > 0 for r in rows)
        assert max(r['worst_rel_err'] for r in rows) < 1e-4

    def test_suite_covers_every_module(self):
        assert MODULES == ['losses', 'tensor_core', 'warp_ops']
        report = run_suite('warp_ops', samples=3)
        assert report.passed
        assert set(report.per_op['op']) == {'bilinear_sample', 'daw_warp', 'upsample_flow', 'merge_two_streams'}

    def test_corrupted_gradient_is_caught(self):
        report = run_suite('tensor_core', samples=3, corrupt=['conv2d'])
        assert not report.passed
        assert report.failures == ['conv2d']

    def test_unknown_module(self):
        with pytest.raises(ConfigError):
            run_suite('optim')
