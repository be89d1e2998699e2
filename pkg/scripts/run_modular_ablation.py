from pathlib import Path

import pandas as pd

from daflow.config import ABLATION_PRESETS
from daflow.report_utils import RunLogger, format_table, save_metrics_snapshot
from daflow.run_config import RunConfig
from daflow.trainer import run_variant
from daflow.visual_utils import ProgressIndicators, with_progress

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'desk_64x48.txt'

# ==================================================
# helper functions
# ==================================================

@with_progress("Building ablation variants")
def build_variants(base: RunConfig):
    """One config per preset; each variant writes to its own sub-directory."""
    variants = {}
    for name in ABLATION_PRESETS:
        config = RunConfig.preset(name, base)
        variants[name] = config.with_overrides({
            'checkpoint_dir': str(Path(base.checkpoint_dir) / 'ablation' / name),
            'output_dir': str(Path(base.output_dir) / 'ablation' / name),
        }).validate()
    return variants


def run_all(variants, logger, train=True):
    rows = []
    for i, (name, config) in enumerate(variants.items(), start=1):
        ProgressIndicators.print_step(f"Variant {i}/{len(variants)}: {name}", "start")
        row = {'variant': name, 'cascade': config.cascade, 'shallow_codec': config.shallow_codec}
        row.update(run_variant(config, train=train, logger=logger))
        rows.append(row)
        ProgressIndicators.print_step(f"{name}: SSIM {row['ssim']:.4f}, PSNR {row['psnr']:.2f} dB", "success")
    return pd.DataFrame(rows)


# ==================================================
# main
# ==================================================

def main(config_path=DEFAULT_CONFIG, test_mode=False):

    ProgressIndicators.print_header("MODULAR ABLATION EXPERIMENT")
    overrides = {}
    if test_mode:
        print(f"\n{'🧪 TEST MODE ENABLED 🧪':^60}")
        overrides = {'train_pairs': '4', 'eval_pairs': '2', 'epochs': '1', 'batch_size': '2'}
        print(f"{'─' * 60}\n")

    try:
        base = RunConfig.from_file(config_path, overrides)
        logger = RunLogger(base.output_dir, 'ablation_log.jsonl')
        variants = build_variants(base)
        table = run_all(variants, logger)

        print("\n📊 Ablation results:")
        print("-" * 50)
        print(format_table(table))

        best = table.loc[table['ssim'].idxmax()]
        ProgressIndicators.print_summary_box(
            "MODULAR ABLATION SUMMARY",
            {
                "Variants": len(table),
                "Best variant": best['variant'],
                "Best SSIM": best['ssim'],
                "Best PSNR (dB)": best['psnr'],
            }
        )

        metrics_results = {'table': table}
        save_metrics_snapshot(metrics_results, 'modular_ablation',
                              str(Path(base.output_dir) / 'metrics_snapshots'))
        ProgressIndicators.print_header("🚀 MODULAR ABLATION COMPLETED 🚀")
        return metrics_results

    except Exception as e:
        ProgressIndicators.print_step(f"Critical error in experiment: {str(e)}", "error")
        ProgressIndicators.print_header("❌ EXPERIMENT FAILED")
        raise


if __name__ == "__main__":
    results = main()
