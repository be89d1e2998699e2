"""Colour-wheel rendering of sampling offsets and grayscale attention tiles."""

from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
from matplotlib.colors import hsv_to_rgb

from daflow.data_synth import write_image
from daflow.errors import FormatError
from daflow.estimators import LevelState
from daflow.tensor_core import Tensor
from daflow.tensor_io import load_tensor
from daflow.warp_ops import attention_weights

TILE_GAP = 2


def flow_to_rgb(flow: np.ndarray, max_magnitude: Optional[float] = None) -> np.ndarray:
    """(2, H, W) offsets -> (3, H, W) RGB; hue = direction, saturation = magnitude.

    Zero offsets render white.
    """
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise FormatError(f"flow_to_rgb expects (2, H, W), got {flow.shape}")
    dx, dy = flow
    mag = np.hypot(dx, dy)
    scale = max_magnitude if max_magnitude else (mag.max() or 1.0)
    hue = (np.arctan2(dy, dx) / (2 * np.pi)) % 1.0
    sat = np.clip(mag / scale, 0.0, 1.0)
    hsv = np.stack([hue, sat, np.ones_like(hue)], axis=-1)
    return hsv_to_rgb(hsv).transpose(2, 0, 1)


def tile(images: List[np.ndarray], columns: Optional[int] = None, fill: float = 1.0) -> np.ndarray:
    """Lay (C, H, W) images out on a grid with a small gap."""
    if not images:
        raise FormatError("Nothing to tile")
    c, h, w = images[0].shape
    columns = columns or len(images)
    rows = -(-len(images) // columns)
    canvas = np.full((c, rows * h + (rows - 1) * TILE_GAP, columns * w + (columns - 1) * TILE_GAP), fill)
    for i, img in enumerate(images):
        r, col = divmod(i, columns)
        y, x = r * (h + TILE_GAP), col * (w + TILE_GAP)
        canvas[:, y:y + h, x:x + w] = img
    return canvas


def render_flow_tiles(flow: np.ndarray, columns: Optional[int] = None) -> np.ndarray:
    """One colour-wheel tile per sample of a (2K, H, W) or (1, 2K, H, W) flow, shared magnitude scale."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim == 4:
        flow = flow[0]
    if flow.ndim != 3 or flow.shape[0] == 0 or flow.shape[0] % 2:
        raise FormatError(f"Flow must carry an even, positive channel count, got {flow.shape}")
    pairs = flow.reshape(-1, 2, *flow.shape[1:])
    peak = float(np.hypot(pairs[:, 0], pairs[:, 1]).max()) or 1.0
    return tile([flow_to_rgb(p, peak) for p in pairs], columns)


def render_attention_tiles(logits: np.ndarray, columns: Optional[int] = None) -> np.ndarray:
    """Softmax weights of (K, H, W) logits as grayscale tiles."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    weights = attention_weights(Tensor(arr)).data[0]
    return tile([w[None] for w in weights], columns, fill=0.0)


def visualize_flow_file(path, out_path) -> Path:
    """Render a saved flow tensor to a PNG."""
    arr = load_tensor(path)
    while arr.ndim > 3 and arr.shape[0] == 1:
        arr = arr[0]
    image = render_flow_tiles(arr)
    write_image(out_path, image)
    return Path(out_path)


def render_level_states(states: List[LevelState], out_dir) -> Dict[str, Path]:
    """Per level: cross (garment) and self (person) flow tiles plus attention tiles."""
    out_dir = Path(out_dir)
    written = {}
    for st in states:
        for stream, flow, attn in (('cross', st.flow_s, st.attn_s), ('self', st.flow_r, st.attn_r)):
            if flow is None:
                continue
            flow_path = out_dir / f"level{st.level}_{stream}_flow.png"
            attn_path = out_dir / f"level{st.level}_{stream}_attention.png"
            write_image(flow_path, render_flow_tiles(flow.data[0]))
            write_image(attn_path, render_attention_tiles(attn.data[0]))
            written[flow_path.stem] = flow_path
            written[attn_path.stem] = attn_path
    return written
