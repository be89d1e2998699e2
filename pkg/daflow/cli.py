"""Command-line entry point: train, infer, gradcheck, visualize-flow, bench, gen-data.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""

import argparse
from pathlib import Path
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from daflow.checkpoint_utils import latest_checkpoint, load_checkpoint
from daflow.config import ABLATION_PRESETS, EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION_FAILED, K_SWEEP
from daflow.data_synth import (
    SyntheticPair,
    generate_pair,
    load_entry,
    load_manifest,
    load_triple,
    render_keypoint_heatmaps,
    write_dataset,
    write_image,
)
from daflow.errors import DaflowError, NumericalError
from daflow.estimators import SDAFN, infer_at_resolution, shrink_to
from daflow.flow_visuals import render_level_states, visualize_flow_file
from daflow.gradcheck import MODULES, run_suite
from daflow.report_utils import RunLogger, format_table, save_metrics_snapshot
from daflow.run_config import RunConfig, parse_overrides
from daflow.tensor_core import Tensor
from daflow.trainer import Trainer, run_variant
from daflow.visual_utils import ExceptionHandler, ProgressIndicators


def load_config(args) -> RunConfig:
    overrides = parse_overrides(getattr(args, 'set', None))
    if getattr(args, 'config', None):
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.from_mapping(overrides)


def parse_dims(text: Optional[str]):
    if not text:
        return None
    try:
        h, w = (int(v) for v in text.lower().split('x'))
    except ValueError:
        raise DaflowError(f"Resolution must look like HxW, got '{text}'")
    return h, w


################################################
# train
################################################

def cmd_train(args) -> int:
    config = load_config(args)
    ProgressIndicators.print_header("DAFlow training")
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    (Path(config.output_dir) / 'config.txt').write_text(config.to_text())
    trainer = Trainer(config)
    if args.resume:
        path = latest_checkpoint(config.checkpoint_dir) if args.resume == 'auto' else Path(args.resume)
        if path is None:
            ProgressIndicators.print_step(f"No checkpoint under {config.checkpoint_dir}; starting fresh", "warning")
        else:
            trainer.resume(path)
    result = trainer.fit()
    summary = {
        'steps': result.steps,
        'epochs run': result.epochs_run,
        'final loss': result.final_loss,
        'checkpoints': len(result.checkpoints),
    }
    if result.evaluations:
        summary.update({f"eval {k}": v for k, v in result.evaluations[-1].items() if k != 'epoch'})
    ProgressIndicators.print_summary_box("TRAINING SUMMARY", summary)
    save_metrics_snapshot({'summary': summary, 'evaluations': result.evaluations, 'losses': result.losses},
                          'train', str(Path(config.output_dir) / 'metrics_snapshots'))
    return EXIT_OK


################################################
# infer
################################################

def run_inference(model: SDAFN, config: RunConfig, pair: SyntheticPair, name: str, out_dir: Path,
                  dims, previews: bool = False, flows: bool = False) -> Path:
    train_dims = (config.image_height, config.image_width)
    sigma = config.heatmap_sigma * dims[1] / train_dims[1]
    person = Tensor(pair.person_masked[None])
    garment = Tensor(pair.garment[None])
    heat = render_keypoint_heatmaps(pair.keypoints, dims, sigma).data[:, :config.keypoint_channels]
    keypoints = Tensor(heat)
    if tuple(dims) == train_dims:
        result = model.forward(person, keypoints, garment, with_previews=previews)
        output, states, level_previews = result.output, result.states, result.previews
    else:
        output = infer_at_resolution(model, person, keypoints, garment, train_dims)
        states, level_previews = [], []
        if previews or flows:
            small = model.forward(shrink_to(person, *train_dims), shrink_to(keypoints, *train_dims),
                                  shrink_to(garment, *train_dims), with_previews=previews)
            states, level_previews = small.states, small.previews
    if not ExceptionHandler.validate_array(f"{name} output", output, ndim=4):
        raise NumericalError(f"Output for {name} failed validation")
    out_path = out_dir / f"{name}.png"
    write_image(out_path, output.data[0])
    for i, p in enumerate(level_previews, start=1):
        write_image(out_dir / f"{name}_preview{i}.png", p.data[0])
    if flows:
        render_level_states(states, out_dir / f"{name}_flows")
    return out_path


def cmd_infer(args) -> int:
    model, config, _, _ = load_checkpoint(args.checkpoint)
    dims = parse_dims(args.resolution) or (config.image_height, config.image_width)
    config.check_dims(*dims)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    ProgressIndicators.print_header(f"DAFlow inference at {dims[0]}x{dims[1]}")

    if args.data:
        manifest = load_manifest(args.data)
        for row in manifest.report.itertuples():
            ProgressIndicators.print_step(f"skipped {row.item}: {row.file} ({row.problem})", "warning")
        items = [(Path(e.person).stem, lambda i=i: load_entry(manifest, i, dims))
                 for i, e in enumerate(manifest.entries)]
    else:
        if not (args.person and args.garment and args.keypoints):
            raise DaflowError("infer needs --data or all of --person, --garment and --keypoints")
        items = [(Path(args.person).stem,
                  lambda: load_triple(args.person, args.garment, args.keypoints, dims))]

    written = 0
    for name, load in items:
        path = ExceptionHandler.safe_execute(
            lambda: run_inference(model, config, load(), name, out_dir, dims, args.previews, args.flows),
            f"Inference failed for {name}")
        if path is not None:
            written += 1
            ProgressIndicators.print_step(f"{name} -> {path}", "success")
    ProgressIndicators.print_summary_box("INFERENCE SUMMARY", {'items': len(items), 'written': written,
                                                               'resolution': f"{dims[0]}x{dims[1]}"})
    return EXIT_OK


################################################
# gradcheck
################################################

def cmd_gradcheck(args) -> int:
    ProgressIndicators.print_header("Gradient check (float64 central differences)")
    report = run_suite(args.module, args.seed, args.samples, corrupt=args.corrupt or ())
    per_op = report.per_op
    for row in per_op.itertuples():
        status = "success" if row.passed else "error"
        ProgressIndicators.print_step(f"{row.op:<20} worst rel err {row.worst_rel_err:.3e} ({row.checked} coords)", status)
    if report.passed:
        ProgressIndicators.print_step(f"All {len(per_op)} ops pass (tol {report.tolerance:g})", "success")
        return EXIT_OK
    ProgressIndicators.print_step(f"Gradient check failed for: {', '.join(report.failures)}", "error")
    return EXIT_VERIFICATION_FAILED


################################################
# visualize-flow
################################################

def cmd_visualize_flow(args) -> int:
    path = visualize_flow_file(args.flow, args.output)
    ProgressIndicators.print_step(f"Flow visualisation written to {path}", "success")
    return EXIT_OK


################################################
# bench
################################################

def _bench_rows(base: RunConfig, variants, train: bool, logger: RunLogger, eval_limit) -> pd.DataFrame:
    rows = []
    for label, overrides in variants:
        ProgressIndicators.print_step(f"Variant {label}", "start")
        config = base.with_overrides({k: str(v) if not isinstance(v, list) else ','.join(map(str, v))
                                      for k, v in overrides.items()})
        config = config.with_overrides({'checkpoint_dir': str(Path(base.checkpoint_dir) / label),
                                        'output_dir': str(Path(base.output_dir) / label)}).validate()
        row = {'variant': label}
        row.update(run_variant(config, train=train, logger=logger, eval_limit=eval_limit))
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_bench(args) -> int:
    base = load_config(args)
    logger = RunLogger(base.output_dir)
    if args.ablation:
        variants = [(name, preset) for name, preset in ABLATION_PRESETS.items()]
        title = 'modular_ablation'
    else:
        ks = [int(k) for k in args.k_sweep.split(',')] if args.k_sweep else K_SWEEP
        variants = [(f"K{k}", {'samples': k}) for k in ks]
        title = 'k_sweep'
    ProgressIndicators.print_header(f"Benchmark: {title}")
    table = _bench_rows(base, variants, args.train_small, logger, args.eval_limit)
    print(format_table(table))
    save_metrics_snapshot({'table': table}, title, str(Path(base.output_dir) / 'metrics_snapshots'))
    return EXIT_OK


################################################
# gen-data
################################################

def cmd_gen_data(args) -> int:
    dims = (args.height, args.width)
    rng = np.random.default_rng(args.seed)
    seeds = rng.choice(2 ** 31 - 1, size=args.count, replace=False)
    pairs = [generate_pair(int(s), args.difficulty, dims) for s in seeds]
    root = write_dataset(args.output, pairs)
    ProgressIndicators.print_step(f"Wrote {len(pairs)} pairs to {root}", "success")
    return EXIT_OK


################################################
# parser
################################################

def _add_config_args(p):
    p.add_argument('--config', help='key=value run configuration file')
    p.add_argument('--set', action='append', metavar='KEY=VALUE', help='override a config key (repeatable)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='daflow', description='Deformable attention flow try-on toolkit')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('train', help='train a model')
    _add_config_args(p)
    p.add_argument('--resume', help="checkpoint directory, or 'auto' for the latest one")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', help='run try-on inference from a checkpoint')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data', help='dataset root (image/, cloth/, pose/)')
    p.add_argument('--person')
    p.add_argument('--garment')
    p.add_argument('--keypoints')
    p.add_argument('--resolution', help='HxW; larger than training dims uses flow interpolation')
    p.add_argument('--output', default='infer_out')
    p.add_argument('--previews', action='store_true', help='also write per-level previews')
    p.add_argument('--flows', action='store_true', help='also write flow and attention tiles')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('gradcheck', help='finite-difference check of every differentiable op')
    p.add_argument('--module', choices=MODULES)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--samples', type=int, default=6)
    p.add_argument('--corrupt', action='append', metavar='OP', help='negative control: perturb the analytic gradient of OP')
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser('visualize-flow', help='render a saved flow tensor as colour-wheel tiles')
    p.add_argument('flow')
    p.add_argument('--output', default='flow.png')
    p.set_defaults(func=cmd_visualize_flow)

    p = sub.add_parser('bench', help='sampling-number sweep or modular ablation')
    _add_config_args(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument('--k-sweep', nargs='?', const=','.join(map(str, K_SWEEP)), help='comma-separated K values')
    group.add_argument('--ablation', action='store_true')
    p.add_argument('--train-small', action='store_true', help='train each variant with the given config first')
    p.add_argument('--eval-limit', type=int, help='score at most this many held-out pairs')
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser('gen-data', help='write synthetic pairs in the image/cloth/pose layout')
    p.add_argument('--output', required=True)
    p.add_argument('--count', type=int, default=16)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--difficulty', choices=['easy', 'hard'], default='easy')
    p.add_argument('--height', type=int, default=64)
    p.add_argument('--width', type=int, default=48)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DaflowError as e:
        ProgressIndicators.print_step(f"{e.__class__.__name__}: {e}", "error")
        return EXIT_USAGE
    except OSError as e:
        ProgressIndicators.print_step(f"File error: {e}", "error")
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
