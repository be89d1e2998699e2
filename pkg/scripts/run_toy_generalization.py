from pathlib import Path

from daflow.report_utils import format_table, save_metrics_snapshot
from daflow.run_config import RunConfig
from daflow.trainer import Trainer
from daflow.visual_utils import ProgressIndicators, with_progress

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'desk_64x48.txt'

# ==================================================
# helper functions
# ==================================================

@with_progress("Loading run configuration")
def load_run_config(config_path, overrides):
    return RunConfig.from_file(config_path, overrides)


@with_progress("Training on synthetic pairs")
def train(trainer: Trainer):
    return trainer.fit()


@with_progress("Scoring held-out pairs")
def score(trainer: Trainer):
    return trainer.evaluate()


# ==================================================
# main
# ==================================================

def main(config_path=DEFAULT_CONFIG, test_mode=False):

    ProgressIndicators.print_header("TOY GENERALIZATION EXPERIMENT")
    overrides = {}
    if test_mode:
        print(f"\n{'🧪 TEST MODE ENABLED 🧪':^60}")
        overrides = {'train_pairs': '8', 'eval_pairs': '4', 'epochs': '1', 'batch_size': '2',
                     'checkpoint_every': '1', 'eval_every': '1'}
        print(f"{'Using 8 training pairs and 1 epoch':^60}")
        print(f"{'─' * 60}\n")

    try:
        config = load_run_config(config_path, overrides)
        trainer = Trainer(config)
        result = train(trainer)
        report = score(trainer)

        print("\n📊 Held-out pairs:")
        print("-" * 50)
        print(format_table(report.per_image.head(10)))

        summary = report.summary()
        ProgressIndicators.print_summary_box(
            "TOY GENERALIZATION SUMMARY",
            {
                "Training pairs": config.train_pairs,
                "Held-out pairs": summary['count'],
                "Epochs": result.epochs_run,
                "Final loss": result.final_loss,
                "Mean SSIM": summary['ssim'],
                "Mean PSNR (dB)": summary['psnr'],
            }
        )

        metrics_results = {
            'summary': summary,
            'per_image': report.per_image,
            'evaluations': result.evaluations,
            'final_loss': result.final_loss,
        }
        save_metrics_snapshot(metrics_results, 'toy_generalization',
                              str(Path(config.output_dir) / 'metrics_snapshots'))
        ProgressIndicators.print_header("🚀 TOY GENERALIZATION COMPLETED 🚀")
        return metrics_results

    except Exception as e:
        ProgressIndicators.print_step(f"Critical error in experiment: {str(e)}", "error")
        ProgressIndicators.print_header("❌ EXPERIMENT FAILED")
        raise


if __name__ == "__main__":
    results = main()
