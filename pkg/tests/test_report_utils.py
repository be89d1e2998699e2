"""
Tests for metric snapshots, the JSONL run log and table formatting
"""

import json
import math

import numpy as np
import pandas as pd

from daflow.report_utils import RunLogger, format_table, save_metrics_snapshot, to_serializable


class TestSerialization:

    def test_numpy_and_pandas_values(self):
        payload = to_serializable({
            'steps': np.int64(3),
            'loss': np.float32(0.5),
            'ok': np.bool_(True),
            'psnr': math.inf,
            'grid': np.eye(2),
            'table': pd.DataFrame({'k': [1, 2], 'ssim': [0.5, np.nan]}),
        })
        assert payload['steps'] == 3 and payload['ok'] is True
        assert payload['psnr'] == 'inf'
        assert payload['grid'] == [[1.0, 0.0], [0.0, 1.0]]
        assert payload['table'][1]['ssim'] == 'nan'
        json.dumps(payload)


class TestSnapshots:

    def test_timestamped_and_latest_files(self, tmp_path):
        filename = save_metrics_snapshot({'psnr': 31.5}, 'k_sweep', str(tmp_path))
        latest = tmp_path / 'k_sweep_metrics_latest.json'
        assert latest.exists() and filename != str(latest)
        data = json.loads(latest.read_text())
        assert data['metadata']['script'] == 'k_sweep'
        assert data['metrics'] == {'psnr': 31.5}


class TestRunLogger:

    def test_records_append(self, tmp_path):
        logger = RunLogger(tmp_path, echo=False)
        logger.log('step', step=1, loss=np.float64(0.25))
        logger.log('eval', 'success', psnr=math.inf)
        records = logger.records()
        assert [r['event'] for r in records] == ['step', 'eval']
        assert records[0]['loss'] == 0.25
        assert records[1]['psnr'] == 'inf'

    def test_empty_log(self, tmp_path):
        assert RunLogger(tmp_path / 'new', echo=False).records() == []


class TestFormatTable:

    def test_floats_are_formatted(self):
        text = format_table(pd.DataFrame({'variant': ['K1'], 'ssim': [0.123456]}))
        assert 'K1' in text and '0.1235' in text
