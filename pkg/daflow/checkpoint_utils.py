"""Checkpoints: model parameters, optimizer moments and the run config in one archive.

Layout of a checkpoint directory:
    model/        tensor archive keyed by parameter path
    optimizer/    tensor archive of AdamW moments and step count (optional)
    manifest.txt  under model/, carries the config snapshot plus epoch/step
"""

from pathlib import Path
import re
from typing import Optional, Tuple

from daflow.errors import ConfigError, FormatError
from daflow.estimators import SDAFN
from daflow.optim import AdamW
from daflow.run_config import RunConfig
from daflow.tensor_io import load_archive, read_manifest, save_archive

_EPOCH_DIR = re.compile(r"^epoch_(\d+)(?:_step_(\d+))?$")
_PROGRESS_KEYS = ('_epoch', '_step')


def checkpoint_path(checkpoint_dir, epoch: int, step: Optional[int] = None) -> Path:
    """`epoch_NNNN` at an epoch boundary, `epoch_NNNN_step_SSSSSS` inside epoch NNNN."""
    name = f"epoch_{epoch:04d}" if step is None else f"epoch_{epoch:04d}_step_{step:06d}"
    return Path(checkpoint_dir) / name


def save_checkpoint(path, model: SDAFN, config: RunConfig, optimizer: Optional[AdamW] = None,
                    epoch: int = 0, step: int = 0) -> Path:
    path = Path(path)
    snapshot = dict(config.to_dict())
    snapshot['_epoch'] = str(epoch)
    snapshot['_step'] = str(step)
    save_archive(path / 'model', model.state_dict(), snapshot)
    if optimizer is not None:
        save_archive(path / 'optimizer', optimizer.state_dict())
    return path


def read_checkpoint_config(path) -> Tuple[RunConfig, int, int]:
    """Config snapshot plus (epoch, step) stored with a checkpoint."""
    _, snapshot = read_manifest(Path(path) / 'model')
    if not snapshot:
        raise FormatError(f"Checkpoint {path} carries no config snapshot")
    epoch = int(snapshot.get('_epoch', 0))
    step = int(snapshot.get('_step', 0))
    values = {k: v for k, v in snapshot.items() if k not in _PROGRESS_KEYS}
    return RunConfig.from_mapping(values), epoch, step


def load_checkpoint(path, model: Optional[SDAFN] = None, optimizer: Optional[AdamW] = None,
                    config: Optional[RunConfig] = None):
    """Restore a checkpoint, building the model from its snapshot when none is given.

    Returns (model, config, epoch, step). Architecture fields of an explicit
    `config` must agree with the snapshot.
    """
    path = Path(path)
    if not (path / 'model').is_dir():
        raise FormatError(f"Not a checkpoint directory: {path}")
    stored, epoch, step = read_checkpoint_config(path)
    if config is not None:
        mine, theirs = config.dafn_config(), stored.dafn_config()
        diff = {k: (getattr(mine, k), getattr(theirs, k)) for k in vars(mine)
                if getattr(mine, k) != getattr(theirs, k)
                and k not in ('image_height', 'image_width', 'heatmap_sigma')}
        if diff:
            raise ConfigError(f"Checkpoint architecture differs from config: {diff}")
    config = config or stored
    if model is None:
        model = SDAFN(config.dafn_config(), seed=config.seed)
    tensors, _ = load_archive(path / 'model')
    model.load_state_dict(tensors)
    if optimizer is not None:
        if not (path / 'optimizer').is_dir():
            raise FormatError(f"Checkpoint {path} holds no optimizer state")
        state, _ = load_archive(path / 'optimizer')
        optimizer.load_state_dict(state)
    return model, config, epoch, step


def latest_checkpoint(checkpoint_dir) -> Optional[Path]:
    root = Path(checkpoint_dir)
    if not root.is_dir():
        return None
    found = [((int(m.group(1)), int(m.group(2) or -1)), p) for p in root.iterdir()
             if p.is_dir() and (m := _EPOCH_DIR.match(p.name))]
    return max(found)[1] if found else None
