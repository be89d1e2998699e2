"""
Shared fixtures: a tiny two-level network and run settings small enough for CPU tests
"""

import os
import sys

import numpy as np
import pytest

# Add project root to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from daflow.estimators import DafnConfig
from daflow.run_config import RunConfig
from daflow.tensor_core import Tensor

TINY_DIMS = (16, 12)

TINY_ARCH = {
    'levels': 2,
    'samples': 2,
    'fpn_channels': [4, 6],
    'fpn_out_channels': 4,
    'mfe_hidden': [6, 6, 4, 4],
    'mfe_kernels': [3, 3, 3, 3],
    'shallow_channels': [4, 6],
    'image_height': TINY_DIMS[0],
    'image_width': TINY_DIMS[1],
    'heatmap_sigma': 1.0,
}


@pytest.fixture
def tiny_config():
    return DafnConfig(**TINY_ARCH).validate()


@pytest.fixture
def tiny_run_config(tmp_path):
    """Run settings for a two-batch epoch on synthetic pairs, writing under tmp_path."""
    return RunConfig(
        **TINY_ARCH,
        epochs=1,
        batch_size=2,
        train_pairs=4,
        eval_pairs=2,
        lambda_prec=0.0,
        lambda_style=0.0,
        lr=1e-3,
        checkpoint_every=1,
        eval_every=1,
        log_every=1,
        prefetch=1,
        checkpoint_dir=str(tmp_path / 'checkpoints'),
        output_dir=str(tmp_path / 'out'),
    ).validate()


@pytest.fixture
def tiny_inputs():
    """(person_masked, keypoints, garment) batch of one at TINY_DIMS."""
    rng = np.random.default_rng(5)
    h, w = TINY_DIMS
    person = Tensor(rng.uniform(0, 1, (1, 3, h, w)).astype(np.float32))
    keypoints = Tensor(rng.uniform(0, 1, (1, 18, h, w)).astype(np.float32))
    garment = Tensor(rng.uniform(0, 1, (1, 3, h, w)).astype(np.float32))
    return person, keypoints, garment
