"""Training loop shared by the `train` and `bench` commands.

All randomness comes from one seeded master sequence forked per purpose
(init, data, order). Batch order is a pure function of (order seed, epoch), so
resuming from a checkpoint replays exactly the batches an uninterrupted run
would have seen. A run stopped by max_steps inside an epoch saves
`epoch_NNNN_step_SSSSSS` and resumes from the next batch of that epoch.
"""

from contextlib import closing
from dataclasses import dataclass, field
from pathlib import Path
import time
from typing import Dict, List, Optional

import numpy as np
from sklearn.model_selection import train_test_split

from daflow.checkpoint_utils import checkpoint_path, load_checkpoint, save_checkpoint
from daflow.data_synth import BatchLoader, ManifestSource, SyntheticSource, collate, load_manifest
from daflow.errors import ConfigError
from daflow.estimators import SDAFN, sdafn_forward
from daflow.losses import LossWeights, PerceptualExtractor, total_loss
from daflow.metrics import MetricReport, evaluate_pairs
from daflow.optim import AdamW, LrSchedule
from daflow.report_utils import RunLogger
from daflow.run_config import RunConfig
from daflow.tensor_core import Tensor, area_downsample, backward, graph_nbytes

SEED_POOL = 2 ** 31 - 1


@dataclass
class SeedForks:
    init: int
    data: int
    order: int

    @classmethod
    def from_seed(cls, seed: int) -> 'SeedForks':
        children = np.random.SeedSequence(seed).spawn(3)
        init, data, order = (int(c.generate_state(1)[0]) for c in children)
        return cls(init=init, data=data, order=order)


@dataclass
class TrainResult:
    steps: int = 0
    epochs_run: int = 0
    losses: List[float] = field(default_factory=list)
    checkpoints: List[Path] = field(default_factory=list)
    evaluations: List[Dict[str, float]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float('nan')


def build_sources(config: RunConfig, seeds: SeedForks):
    """(train, eval) pair sources for the configured task."""
    dims = (config.image_height, config.image_width)
    if config.task == 'manifest':
        manifest = load_manifest(config.data_root, dims=None)
        if len(manifest) < 2:
            raise ConfigError(f"Manifest at {config.data_root} has {len(manifest)} usable entries; need at least 2")
        source = ManifestSource(manifest, dims)
        idx = np.arange(len(manifest))
        n_eval = min(config.eval_pairs, len(idx) - 1)
        train_idx, eval_idx = train_test_split(idx, test_size=n_eval, random_state=seeds.data % (2 ** 32))
        return _Subset(source, train_idx), _Subset(source, eval_idx)

    rng = np.random.default_rng(seeds.data)
    if config.overfit:
        seed = int(rng.integers(SEED_POOL))
        one = SyntheticSource([seed], config.difficulty, dims)
        return one, one
    pool = rng.choice(SEED_POOL, size=config.train_pairs + config.eval_pairs, replace=False)
    train_seeds, eval_seeds = train_test_split(pool, test_size=config.eval_pairs,
                                               random_state=seeds.data % (2 ** 32))
    return (SyntheticSource(train_seeds.tolist(), config.difficulty, dims),
            SyntheticSource(eval_seeds.tolist(), config.difficulty, dims))


class _Subset:

    def __init__(self, source, indices):
        self.source = source
        self.indices = [int(i) for i in indices]

    def __len__(self):
        return len(self.indices)

    def __getitem__(self, i):
        return self.source[self.indices[i]]


def scale_targets(target: Tensor, previews: List[Tensor]) -> List[Tensor]:
    """Ground truth area-downsampled to every preview's resolution."""
    h = target.dims[2]
    return [area_downsample(target, h // p.dims[2]) for p in previews]


class Trainer:

    def __init__(self, config: RunConfig, logger: Optional[RunLogger] = None,
                 extractor: Optional[PerceptualExtractor] = None):
        self.config = config.validate()
        self.seeds = SeedForks.from_seed(config.seed)
        self.model = SDAFN(config.dafn_config(), seed=self.seeds.init % (2 ** 32))
        self.optimizer = AdamW(self.model.trainable_parameters(), lr=config.lr, beta1=config.beta1,
                               beta2=config.beta2, eps=config.eps, weight_decay=config.weight_decay)
        self.schedule = LrSchedule(config.lr, config.lr_decay, config.lr_decay_every)
        self.weights = LossWeights(config.lambda_l1, config.lambda_prec, config.lambda_style)
        self.extractor = extractor if extractor is not None else self._build_extractor()
        self.logger = logger or RunLogger(config.output_dir)
        self.train_source, self.eval_source = build_sources(config, self.seeds)
        batch_size = 1 if config.overfit else config.batch_size
        self.loader = BatchLoader(self.train_source, batch_size, seed=self.seeds.order,
                                  prefetch=config.prefetch, sigma=config.heatmap_sigma,
                                  keypoint_channels=config.keypoint_channels)
        self.epoch = 0
        self.step_count = 0

    def _build_extractor(self) -> Optional[PerceptualExtractor]:
        if self.weights.prec == 0 and self.weights.style == 0:
            return None
        if self.config.perceptual_weights:
            return PerceptualExtractor.load(self.config.perceptual_weights)
        return PerceptualExtractor(seed=self.seeds.init % (2 ** 32), min_size=self.config.perceptual_min_size)

    def compute_loss(self, batch):
        result = sdafn_forward(self.model, batch.person_masked, batch.keypoints, batch.garment)
        outputs = result.previews + [result.output]
        targets = scale_targets(batch.target, result.previews) + [batch.target]
        loss, components = total_loss(outputs, targets, self.weights, self.extractor,
                                      self.config.level_weighting)
        return loss, components, result

    def train_step(self, batch, lr: float):
        self.model.zero_grad()
        loss, components, _ = self.compute_loss(batch)
        backward(loss)
        self.optimizer.lr = lr
        self.optimizer.step()
        self.step_count += 1
        return loss.item(), components

    def resume(self, path):
        _, _, epoch, step = load_checkpoint(path, self.model, self.optimizer, self.config)
        self.epoch, self.step_count = epoch, step
        self.logger.log('resume', checkpoint=str(path), epoch=epoch, step=step)
        return self

    def save(self, inside_epoch: bool = False) -> Path:
        step = self.step_count if inside_epoch else None
        path = checkpoint_path(self.config.checkpoint_dir, self.epoch, step)
        save_checkpoint(path, self.model, self.config, self.optimizer, self.epoch, self.step_count)
        self.logger.log('checkpoint', 'success', path=str(path), epoch=self.epoch, step=self.step_count)
        return path

    def _out_of_steps(self) -> bool:
        return bool(self.config.max_steps) and self.step_count >= self.config.max_steps

    def _position(self) -> int:
        """Batches of the current epoch already trained on; every finished epoch ran len(loader) steps."""
        n = len(self.loader)
        return min(max(self.step_count - self.epoch * n, 0), n)

    def fit(self) -> TrainResult:
        cfg = self.config
        result = TrainResult()
        if self.epoch == 0 and self.step_count == 0:
            result.checkpoints.append(self.save())
        while self.epoch < cfg.epochs and not self._out_of_steps():
            lr = self.schedule.lr_at(self.epoch)
            position = self._position()
            with closing(self.loader.epoch(self.epoch, start=position)) as batches:
                for batch in batches:
                    loss, components = self.train_step(batch, lr)
                    position += 1
                    result.losses.append(loss)
                    if self.step_count % cfg.log_every == 0:
                        self.logger.log('step', step=self.step_count, epoch=self.epoch, lr=lr, loss=loss,
                                        components=_group_components(components))
                    if self._out_of_steps():
                        break
            inside = position < len(self.loader)
            if not inside:
                self.epoch += 1
                result.epochs_run += 1
            last = inside or self.epoch == cfg.epochs or self._out_of_steps()
            if (not inside and self.epoch % cfg.checkpoint_every == 0) or last:
                result.checkpoints.append(self.save(inside_epoch=inside))
            if (not inside and self.epoch % cfg.eval_every == 0) or last:
                report = self.evaluate()
                result.evaluations.append({'epoch': self.epoch, **report.summary()})
                self.logger.log('eval', 'success', epoch=self.epoch, **report.summary())
            if last:
                break
        result.steps = self.step_count
        return result

    def evaluate(self, source=None, limit: Optional[int] = None) -> MetricReport:
        source = source if source is not None else self.eval_source
        n = len(source) if limit is None else min(limit, len(source))
        outputs, targets = [], []
        for start in range(0, n, self.loader.batch_size):
            pairs = [source[i] for i in range(start, min(n, start + self.loader.batch_size))]
            batch = collate(pairs, self.config.heatmap_sigma, self.config.keypoint_channels)
            out = self.model.forward(batch.person_masked, batch.keypoints, batch.garment,
                                     with_previews=False).output
            outputs.extend(out.data)
            targets.extend(batch.target.data)
        return evaluate_pairs(outputs, targets)


def _group_components(components: Dict[str, float]) -> Dict[str, float]:
    grouped: Dict[str, float] = {}
    for key, value in components.items():
        kind = key.split('/')[0]
        grouped[kind] = grouped.get(kind, 0.0) + value
    return grouped


def time_forward(model: SDAFN, batch, repeats: int = 3) -> Dict[str, float]:
    """Best-of-n wall clock for one forward pass plus a graph-memory estimate."""
    timings = []
    result = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        result = model.forward(batch.person_masked, batch.keypoints, batch.garment, with_previews=False)
        timings.append(time.perf_counter() - start)
    return {'forward_s': min(timings), 'graph_mb': graph_nbytes(result.output) / 2 ** 20}


def run_variant(config: RunConfig, train: bool = True, logger: Optional[RunLogger] = None,
                eval_limit: Optional[int] = None) -> Dict[str, float]:
    """Optionally train one configuration, then time it and score the held-out pairs."""
    trainer = Trainer(config, logger=logger)
    if train:
        trainer.fit()
    sample = collate([trainer.eval_source[0]], config.heatmap_sigma, config.keypoint_channels)
    row = {'samples': config.samples, 'parameters': trainer.model.num_parameters()}
    row.update(time_forward(trainer.model, sample))
    row.update(trainer.evaluate(limit=eval_limit).summary())
    return row
