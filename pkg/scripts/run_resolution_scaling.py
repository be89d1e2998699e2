from pathlib import Path

import numpy as np
import pandas as pd

from daflow.checkpoint_utils import latest_checkpoint, load_checkpoint
from daflow.data_synth import collate, generate_pair
from daflow.estimators import infer_at_resolution, shrink_to
from daflow.metrics import bicubic_upsample, high_band_energy
from daflow.report_utils import format_table, save_metrics_snapshot
from daflow.run_config import RunConfig
from daflow.trainer import Trainer
from daflow.visual_utils import ProgressIndicators, with_progress

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'desk_64x48.txt'
HELD_OUT_SEED = 900_000
SCALE = 2

# ==================================================
# helper functions
# ==================================================

@with_progress("Preparing model at training resolution")
def prepare_model(config: RunConfig, checkpoint=None):
    """Load `checkpoint` (or the newest one in the run) when present, else train from scratch."""
    path = checkpoint or latest_checkpoint(config.checkpoint_dir)
    if path is not None:
        model, _, epoch, _ = load_checkpoint(path, config=config)
        ProgressIndicators.print_step(f"Loaded {path} (epoch {epoch})", "info")
        return model
    trainer = Trainer(config)
    trainer.fit()
    return trainer.model


def compare_pair(model, config: RunConfig, seed: int):
    """High-band energy inside the warped garment: direct full-resolution render vs upsampled low-res output."""
    h1, w1 = config.image_height, config.image_width
    h2, w2 = SCALE * h1, SCALE * w1
    pair = generate_pair(seed, config.difficulty, (h2, w2), texture='stripes')
    batch = collate([pair], config.heatmap_sigma * SCALE, config.keypoint_channels)

    direct = infer_at_resolution(model, batch.person_masked, batch.keypoints, batch.garment, (h1, w1))
    low = model.forward(shrink_to(batch.person_masked, h1, w1), shrink_to(batch.keypoints, h1, w1),
                        shrink_to(batch.garment, h1, w1), with_previews=False).output
    upsampled = bicubic_upsample(low.data[0], (h2, w2))

    support = (pair.warped_alpha > 0.5).astype(np.float64)
    return {
        'seed': seed,
        'direct_energy': high_band_energy(direct.data[0], mask=support),
        'upsampled_energy': high_band_energy(upsampled, mask=support),
        'target_energy': high_band_energy(pair.target, mask=support),
    }


# ==================================================
# main
# ==================================================

def main(config_path=DEFAULT_CONFIG, checkpoint=None, pairs=50, test_mode=False):

    ProgressIndicators.print_header("RESOLUTION SCALING EXPERIMENT")
    overrides = {}
    if test_mode:
        print(f"\n{'🧪 TEST MODE ENABLED 🧪':^60}")
        overrides = {'train_pairs': '4', 'eval_pairs': '2', 'epochs': '1', 'batch_size': '2'}
        pairs = 3
        print(f"{'Comparing 3 held-out pairs':^60}")
        print(f"{'─' * 60}\n")

    try:
        config = RunConfig.from_file(config_path, overrides)
        config.check_dims(SCALE * config.image_height, SCALE * config.image_width)
        model = prepare_model(config, checkpoint)

        # ==================================================
        # Held-out striped pairs at twice the training size
        # ==================================================
        rows = []
        for i in range(pairs):
            rows.append(compare_pair(model, config, HELD_OUT_SEED + i))
            ProgressIndicators.print_progress_bar(i + 1, pairs, suffix="pairs")
        table = pd.DataFrame(rows)
        table['direct_wins'] = table['direct_energy'] > table['upsampled_energy']

        print("\n📊 High-band energy per pair:")
        print("-" * 50)
        print(format_table(table.head(10)))

        win_fraction = float(table['direct_wins'].mean())
        ProgressIndicators.print_summary_box(
            "RESOLUTION SCALING SUMMARY",
            {
                "Training size": f"{config.image_height}x{config.image_width}",
                "Inference size": f"{SCALE * config.image_height}x{SCALE * config.image_width}",
                "Pairs": len(table),
                "Mean direct energy": table['direct_energy'].mean(),
                "Mean upsampled energy": table['upsampled_energy'].mean(),
                "Direct win fraction": win_fraction,
            }
        )

        metrics_results = {'table': table, 'win_fraction': win_fraction}
        save_metrics_snapshot(metrics_results, 'resolution_scaling',
                              str(Path(config.output_dir) / 'metrics_snapshots'))
        ProgressIndicators.print_header("🚀 RESOLUTION SCALING COMPLETED 🚀")
        return metrics_results

    except Exception as e:
        ProgressIndicators.print_step(f"Critical error in experiment: {str(e)}", "error")
        ProgressIndicators.print_header("❌ EXPERIMENT FAILED")
        raise


if __name__ == "__main__":
    results = main()
