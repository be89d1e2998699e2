"""Paired image quality metrics (SSIM, PSNR) and a spectral detail measure."""

from dataclasses import dataclass
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from daflow.config import PSNR_CAP_DB
from daflow.errors import ShapeError
from daflow.report_utils import format_table, to_serializable

SSIM_SIGMA = 1.5
# Gaussian window width implied by SSIM_SIGMA (truncate at 3.5 sigma)
SSIM_WINDOW = 11
LUMA = np.array([0.299, 0.587, 0.114])


def _as_array(x) -> np.ndarray:
    return np.asarray(getattr(x, 'data', x), dtype=np.float64)


def _strip_batch(arr: np.ndarray) -> np.ndarray:
    if arr.ndim == 4:
        if arr.shape[0] != 1:
            raise ShapeError(f"Expected a single image, got batch {arr.shape}")
        arr = arr[0]
    return arr


def to_gray(image) -> np.ndarray:
    """(3, H, W) RGB -> luma, (1, H, W) or (H, W) passed through."""
    arr = _strip_batch(_as_array(image))
    if arr.ndim == 2:
        return arr
    if arr.shape[0] == 3:
        return np.tensordot(LUMA, arr, axes=1)
    if arr.shape[0] == 1:
        return arr[0]
    raise ShapeError(f"Cannot convert image of shape {arr.shape} to grayscale")


def psnr(a, b, max_value: float = 1.0, cap: Optional[float] = None) -> float:
    """10 log10(max^2 / MSE); identical inputs give inf unless capped."""
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ShapeError(f"psnr: {x.shape} vs {y.shape}")
    if np.array_equal(x, y):
        value = float('inf')
    else:
        value = float(peak_signal_noise_ratio(x, y, data_range=max_value))
    return min(value, cap) if cap is not None else value


def ssim(a, b, max_value: float = 1.0) -> float:
    """Mean local SSIM over every valid 11x11 Gaussian window of the luma."""
    x, y = to_gray(a), to_gray(b)
    if x.shape != y.shape:
        raise ShapeError(f"ssim: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs images of at least {SSIM_WINDOW}px, got {x.shape}")
    return float(structural_similarity(x, y, gaussian_weights=True, sigma=SSIM_SIGMA,
                                       use_sample_covariance=False, data_range=max_value))


@dataclass
class MetricReport:
    per_image: pd.DataFrame

    @property
    def count(self) -> int:
        return len(self.per_image)

    @property
    def mean_ssim(self) -> float:
        return float(self.per_image['ssim'].mean()) if self.count else float('nan')

    @property
    def mean_psnr(self) -> float:
        """Mean PSNR with infinite entries capped."""
        if not self.count:
            return float('nan')
        return float(self.per_image['psnr'].clip(upper=PSNR_CAP_DB).mean())

    def summary(self) -> dict:
        return {'count': self.count, 'ssim': self.mean_ssim, 'psnr': self.mean_psnr}

    def to_text(self) -> str:
        table = self.per_image.assign(psnr=self.per_image['psnr'].clip(upper=PSNR_CAP_DB))
        s = self.summary()
        footer = f"mean over {s['count']} images: SSIM {s['ssim']:.4f}  PSNR {s['psnr']:.2f} dB"
        return format_table(table) + '\n' + footer

    def to_json(self, path=None) -> str:
        payload = {
            'summary': to_serializable(self.summary()),
            'per_image': to_serializable(self.per_image.assign(
                psnr=self.per_image['psnr'].clip(upper=PSNR_CAP_DB))),
        }
        text = json.dumps(payload, indent=2)
        if path is not None:
            Path(path).parent.mkdir(parents=True, exist_ok=True)
            Path(path).write_text(text)
        return text


def evaluate_pairs(outputs: Sequence, targets: Sequence, names: Optional[Sequence[str]] = None) -> MetricReport:
    """Per-image SSIM and PSNR; outputs and targets are sequences of (3, H, W) images or (N, 3, H, W) stacks."""
    outs = [o for o in _as_array(outputs)] if not isinstance(outputs, (list, tuple)) else list(outputs)
    tgts = [t for t in _as_array(targets)] if not isinstance(targets, (list, tuple)) else list(targets)
    if len(outs) != len(tgts):
        raise ShapeError(f"evaluate_pairs got {len(outs)} outputs and {len(tgts)} targets")
    names = list(names) if names is not None else [str(i) for i in range(len(outs))]
    rows = [{'image': n, 'ssim': ssim(o, t), 'psnr': psnr(o, t)} for n, o, t in zip(names, outs, tgts)]
    return MetricReport(pd.DataFrame(rows, columns=['image', 'ssim', 'psnr']))


def high_band_energy(image, cutoff: float = 0.5, mask: Optional[np.ndarray] = None) -> float:
    """Spectral energy of the luma above `cutoff` x Nyquist (radial), mean removed."""
    g = to_gray(image)
    if mask is not None:
        g = g * mask
    g = g - g.mean()
    spec = np.abs(np.fft.fft2(g)) ** 2
    fy = np.fft.fftfreq(g.shape[0])[:, None] / 0.5
    fx = np.fft.fftfreq(g.shape[1])[None, :] / 0.5
    radius = np.sqrt(fx ** 2 + fy ** 2)
    return float(spec[radius > cutoff].sum() / g.size)


def bicubic_upsample(image, dims) -> np.ndarray:
    """Cubic spline resize of a (C, H, W) image to `dims`, clipped to [0, 1]."""
    arr = _strip_batch(_as_array(image))
    zoom = (1, dims[0] / arr.shape[1], dims[1] / arr.shape[2])
    return np.clip(ndimage.zoom(arr, zoom, order=3, mode='nearest', grid_mode=True), 0.0, 1.0)
