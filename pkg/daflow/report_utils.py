import json
import os
from datetime import date, datetime
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from daflow import __version__
from daflow.visual_utils import ProgressIndicators


def to_serializable(value):
    """Convert numpy/pandas values into JSON-native types."""
    if isinstance(value, pd.DataFrame):
        return [{k: to_serializable(v) for k, v in record.items()}
                for record in value.to_dict('records')]
    if isinstance(value, dict):
        return {str(k): to_serializable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_serializable(v) for v in value]
    if isinstance(value, (datetime, date)):
        return value.isoformat()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if np.isfinite(value) else str(value)
    if isinstance(value, np.ndarray):
        return to_serializable(value.tolist())
    if value is not None and not isinstance(value, (str, int, bool)) and pd.isna(value):
        return None
    return value


def save_metrics_snapshot(metrics_data: dict, script_name: str = 'train',
                          metrics_dir: Optional[str] = None) -> str:
    """
    Save run metrics to a JSON file for later report generation.

    Args:
        metrics_data: dict containing all metrics from the run
        script_name: name of the run (used in filename)
        metrics_dir: target directory, defaults to $DAFLOW_OUTPUT_DIR/metrics_snapshots
    """
    metrics_dir = metrics_dir or os.path.join(os.getenv('DAFLOW_OUTPUT_DIR', '.'), 'metrics_snapshots')
    os.makedirs(metrics_dir, exist_ok=True)

    metadata = {
        'generated_at': datetime.now().isoformat(),
        'script': script_name,
        'version': __version__,
    }
    output = {
        'metadata': metadata,
        'metrics': to_serializable(metrics_data),
    }

    timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
    filename = os.path.join(metrics_dir, f"{script_name}_metrics_{timestamp}.json")
    with open(filename, 'w') as f:
        json.dump(output, f, indent=2, default=str)

    latest_filename = os.path.join(metrics_dir, f"{script_name}_metrics_latest.json")
    with open(latest_filename, 'w') as f:
        json.dump(output, f, indent=2, default=str)

    print(f"\n{ProgressIndicators.SAVE} Metrics saved to:")
    print(f"   - {filename}")
    print(f"   - {latest_filename}")

    return filename


class RunLogger:
    """Line-delimited JSON run log with a human-readable terminal mirror."""

    def __init__(self, output_dir, name: str = 'run_log.jsonl', echo: bool = True):
        self.path = Path(output_dir) / name
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.echo = echo

    def log(self, event: str, status: str = 'info', **fields: Any) -> Dict[str, Any]:
        record = {'event': event, **to_serializable(fields)}
        with open(self.path, 'a') as f:
            f.write(json.dumps(record) + '\n')
        if self.echo:
            details = ' '.join(f"{k}={_short(v)}" for k, v in record.items() if k != 'event')
            ProgressIndicators.print_step(f"{event} {details}".strip(), status)
        return record

    def records(self):
        if not self.path.exists():
            return []
        with open(self.path) as f:
            return [json.loads(line) for line in f if line.strip()]


def _short(value):
    if isinstance(value, float):
        return f"{value:.5g}"
    if isinstance(value, dict):
        return '{' + ', '.join(f"{k}: {_short(v)}" for k, v in value.items()) + '}'
    return value


def format_table(df: pd.DataFrame, float_format: str = '{:.4f}') -> str:
    """Plain-text table used for benchmark and metric reports."""
    if df.empty:
        return '(no rows)'
    return df.to_string(index=False, float_format=lambda v: float_format.format(v))
