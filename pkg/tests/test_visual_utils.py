"""
Tests for terminal progress helpers
"""

import numpy as np
import pytest

from daflow.visual_utils import ExceptionHandler, ProgressIndicators, with_progress


class TestProgressHelpers:

    def test_safe_execute_returns_fallback(self, capsys):
        def boom():
            raise RuntimeError("bad pair")

        assert ExceptionHandler.safe_execute(boom, "Inference failed", return_on_error=-1) == -1
        assert "Inference failed: bad pair" in capsys.readouterr().out
        assert ExceptionHandler.safe_execute(lambda: 3) == 3

    def test_with_progress_reraises(self, capsys):
        @with_progress("Scoring")
        def score(fail):
            if fail:
                raise ValueError("no pairs")
            return 0.5

        assert score(False) == 0.5
        with pytest.raises(ValueError):
            score(True)
        out = capsys.readouterr().out
        assert "Scoring done" in out and "Scoring failed: no pairs" in out

    def test_summary_box_formats_values(self, capsys):
        ProgressIndicators.print_summary_box("RUN", {'steps': 12000, 'loss': 0.123456789, 'ok': True})
        out = capsys.readouterr().out
        assert "12,000" in out and "0.123457" in out and "True" in out

    def test_validate_array(self, capsys):
        assert ExceptionHandler.validate_array("output", np.zeros((1, 3, 4, 4)), ndim=4)
        assert not ExceptionHandler.validate_array("output", np.zeros((3, 4, 4)), ndim=4)
        assert not ExceptionHandler.validate_array("output", np.array([np.nan]))
        assert not ExceptionHandler.validate_array("output", None)
        assert "expected 4" in capsys.readouterr().out
