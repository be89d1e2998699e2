"""Terminal progress indicators and exception helpers for training and experiment runs."""

from functools import wraps
import time
import traceback
from typing import Any, Callable, Dict, Optional

import numpy as np


class ProgressIndicators:
    """Status symbols and console formatting shared by the CLI, trainer and scripts."""

    SUCCESS = "✅"
    ERROR = "❌"
    WARNING = "⚠️"
    INFO = "ℹ️"
    LOADING = "🔄"
    SAVE = "💾"
    CLOCK = "⏰"

    # status -> (icon, trailing text)
    STATUS = {
        "start": (LOADING, "..."),
        "success": (SUCCESS, ""),
        "error": (ERROR, ""),
        "warning": (WARNING, ""),
        "info": (INFO, ""),
    }

    @staticmethod
    def print_header(title: str):
        rule = "=" * max(40, len(title) + 4)
        print(f"\n{rule}\n  {title}\n{rule}")

    @staticmethod
    def print_step(step: str, status: str = "start"):
        icon, tail = ProgressIndicators.STATUS.get(status, ("", ""))
        lead = "\n" if status == "start" else ""
        print(f"{lead}{icon} {step}{tail}")

    @staticmethod
    def format_value(value: Any) -> str:
        if isinstance(value, (bool, np.bool_)):
            return str(bool(value))
        if isinstance(value, (int, np.integer)):
            return f"{int(value):,}"
        if isinstance(value, (float, np.floating)):
            return f"{float(value):.6g}"
        return str(value)

    @staticmethod
    def print_summary_box(title: str, items: Dict[str, Any]):
        """Key/value box with aligned keys."""
        width = max((len(str(k)) for k in items), default=0)
        print(f"\n┌─ {title} ─")
        for key, value in items.items():
            print(f"│ {str(key):<{width}}  {ProgressIndicators.format_value(value)}")
        print("└" + "─" * (len(title) + 4))

    @staticmethod
    def print_progress_bar(current: int, total: int, width: int = 40, suffix: str = ""):
        if total <= 0:
            return
        done = min(current, total) / total
        cells = int(round(width * done))
        end = "\n" if current >= total else ""
        print(f"\r[{'#' * cells}{'.' * (width - cells)}] {current}/{total} {suffix}".rstrip(), end=end, flush=True)


class ExceptionHandler:

    @staticmethod
    def safe_execute(func: Callable, error_message: str = "Operation failed",
                     return_on_error: Any = None, show_traceback: bool = False) -> Any:
        """Run `func`; on failure report it and return `return_on_error`."""
        try:
            return func()
        except Exception as e:
            ProgressIndicators.print_step(f"{error_message}: {e}", "error")
            if show_traceback:
                print(traceback.format_exc())
            return return_on_error

    @staticmethod
    def validate_array(name: str, array, ndim: Optional[int] = None) -> bool:
        """Print a validation line for `array`; False when empty, mis-ranked or non-finite."""
        arr = None if array is None else np.asarray(getattr(array, "data", array))
        problem = None
        if arr is None or arr.size == 0:
            problem = "is empty"
        elif ndim is not None and arr.ndim != ndim:
            problem = f"has rank {arr.ndim}, expected {ndim}"
        elif not np.isfinite(arr).all():
            problem = "holds non-finite values"
        if problem:
            ProgressIndicators.print_step(f"{name} {problem}", "error")
            return False
        ProgressIndicators.print_step(f"{name} ok {arr.shape}", "info")
        return True


def with_progress(description: str):
    """Report start, elapsed time and outcome of a pipeline step."""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            ProgressIndicators.print_step(description, "start")
            started = time.perf_counter()
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                ProgressIndicators.print_step(f"{description} failed: {e}", "error")
                raise
            elapsed = time.perf_counter() - started
            ProgressIndicators.print_step(f"{description} done {ProgressIndicators.CLOCK} {elapsed:.1f}s", "success")
            return result
        return wrapper
    return decorator
