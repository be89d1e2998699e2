"""Desk-scale try-on data.

`generate_pair` draws a procedural person wearing a textured garment whose
placement is a known smooth warp of a flat garment image, so the ground-truth
flow is available for every pair. `load_manifest` reads VITON-style folders
(image/, cloth/, pose/, optional pairs.txt); `write_dataset` writes that layout.

Images are float32 arrays (3, H, W) in [0, 1]; keypoints are (18, 3) arrays of
(x, y, visibility) in pixels.
"""

from dataclasses import dataclass, field
import json
from pathlib import Path
import queue
import threading
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from matplotlib.path import Path as MplPath
from PIL import Image, ImageDraw, UnidentifiedImageError

from daflow.config import MASK_FILL, NUM_KEYPOINTS, TORSO_KEYPOINTS
from daflow.errors import DataError
from daflow.tensor_core import Tensor
from daflow.visual_utils import ProgressIndicators
from daflow.warp_ops import bilinear_sample

DIFFICULTY_RANGES = {
    # rotation (deg), scale jitter, centre jitter, sinusoid amplitude, arm swing (deg)
    'easy': {'rotation': 5.0, 'scale': 0.06, 'shift': 0.04, 'wave': 0.0, 'arms': 10.0},
    'hard': {'rotation': 20.0, 'scale': 0.15, 'shift': 0.08, 'wave': 0.05, 'arms': 60.0},
}
MAX_DISPLACEMENT = 0.25  # fraction of image width
IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg')

# canonical frontal skeleton in normalized coordinates
CANONICAL_KEYPOINTS = np.array([
    [0.00, -0.78], [0.00, -0.52], [-0.38, -0.45], [-0.50, -0.12], [-0.56, 0.18],
    [0.38, -0.45], [0.50, -0.12], [0.56, 0.18], [-0.26, 0.25], [-0.24, 0.58],
    [-0.24, 0.90], [0.26, 0.25], [0.24, 0.58], [0.24, 0.90], [-0.07, -0.82],
    [0.07, -0.82], [-0.14, -0.80], [0.14, -0.80],
])
# garment outline in the same coordinates: body plus short sleeves
GARMENT_POLYGON = np.array([
    [-0.42, -0.50], [-0.64, -0.40], [-0.58, -0.18], [-0.44, -0.24], [-0.32, 0.32],
    [0.32, 0.32], [0.44, -0.24], [0.58, -0.18], [0.64, -0.40], [0.42, -0.50],
    [0.12, -0.54], [-0.12, -0.54],
])


@dataclass
class SyntheticPair:
    garment: np.ndarray
    person: np.ndarray
    person_masked: np.ndarray
    keypoints: np.ndarray
    target: np.ndarray
    mask_box: Tuple[int, int, int, int]
    flow: Optional[np.ndarray] = None
    garment_alpha: Optional[np.ndarray] = None
    warped_alpha: Optional[np.ndarray] = None
    seed: Optional[int] = None

    @property
    def dims(self) -> Tuple[int, int]:
        return self.target.shape[1], self.target.shape[2]


@dataclass
class ManifestEntry:
    person: str
    garment: str
    keypoints: str


@dataclass
class DatasetManifest:
    root: Path
    entries: List[ManifestEntry]
    split: str = 'test'
    report: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=['item', 'file', 'problem']))

    def __len__(self):
        return len(self.entries)


################################################
# geometry and rendering helpers
################################################

def _grid(dims):
    """Normalized pixel-centre coordinates, corner aligned."""
    h, w = dims
    ys = np.linspace(-1.0, 1.0, h) if h > 1 else np.zeros(1)
    xs = np.linspace(-1.0, 1.0, w) if w > 1 else np.zeros(1)
    return np.meshgrid(xs, ys)


def _to_pixels(points: np.ndarray, dims) -> np.ndarray:
    h, w = dims
    return np.stack([(points[:, 0] + 1) * (w - 1) / 2, (points[:, 1] + 1) * (h - 1) / 2], axis=1)


def _rotation(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    return np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])


def _draw_segment(draw: ImageDraw.ImageDraw, p, q, radius: float):
    """Capsule of the given radius around segment pq."""
    draw.line([tuple(p), tuple(q)], fill=255, width=max(1, int(round(2 * radius))))
    for x, y in (p, q):
        draw.ellipse([x - radius, y - radius, x + radius, y + radius], fill=255)


def render_texture(rng: np.random.Generator, gx: np.ndarray, gy: np.ndarray,
                   kind: Optional[str] = None, frequency: Optional[float] = None) -> np.ndarray:
    """Stripes or checkers defined in garment coordinates, so any resolution sees the same cloth."""
    kind = kind or rng.choice(['stripes', 'checkers'])
    colors = rng.uniform(0.05, 0.95, size=(2, 3))
    if np.abs(colors[0] - colors[1]).max() < 0.3:
        colors[1] = 1.0 - colors[0]
    freq = frequency if frequency is not None else rng.uniform(3.0, 8.0)
    angle = rng.uniform(0, np.pi)
    if kind == 'stripes':
        phase = np.sin(np.pi * freq * (gx * np.cos(angle) + gy * np.sin(angle)))
    elif kind == 'checkers':
        phase = np.sin(np.pi * freq * gx) * np.sin(np.pi * freq * gy)
    else:
        raise DataError(f"Unknown texture '{kind}'")
    mix = (phase > 0).astype(np.float64)[None]
    return colors[0][:, None, None] * mix + colors[1][:, None, None] * (1 - mix)


def render_garment(rng: np.random.Generator, dims, texture: Optional[str] = None,
                   frequency: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Flat garment on a white background; returns (rgb, alpha)."""
    gx, gy = _grid(dims)
    inside = MplPath(GARMENT_POLYGON).contains_points(np.column_stack([gx.ravel(), gy.ravel()]))
    alpha = inside.reshape(gx.shape).astype(np.float64)
    cloth = render_texture(rng, gx, gy, texture, frequency)
    rgb = cloth * alpha[None] + (1 - alpha[None])
    return rgb, alpha


def render_body(rng: np.random.Generator, keypoints_px: np.ndarray, dims) -> np.ndarray:
    """Flat-shaded silhouette (head, torso, limbs) on a light background."""
    h, w = dims
    background = rng.uniform(0.75, 0.95, size=3)
    skin = rng.uniform([0.45, 0.3, 0.2], [0.9, 0.75, 0.6])
    legs = rng.uniform(0.1, 0.4, size=3)
    img = np.broadcast_to(background[:, None, None], (3, h, w)).copy()
    thickness = max(1.0, 0.05 * w)
    kp = keypoints_px[:, :2]

    legs_mask = Image.new('L', (w, h), 0)
    draw = ImageDraw.Draw(legs_mask)
    for a, b in ((8, 9), (9, 10), (11, 12), (12, 13)):
        _draw_segment(draw, kp[a], kp[b], thickness)

    skin_mask = Image.new('L', (w, h), 0)
    draw = ImageDraw.Draw(skin_mask)
    draw.polygon([tuple(kp[i]) for i in (2, 5, 11, 8)], fill=255)
    for a, b in ((1, 2), (1, 5), (2, 3), (3, 4), (5, 6), (6, 7), (0, 1)):
        _draw_segment(draw, kp[a], kp[b], thickness)
    head_r = 0.13 * abs(kp[5, 0] - kp[2, 0]) + 0.06 * w
    cx, cy = kp[0]
    draw.ellipse([cx - head_r, cy - head_r, cx + head_r, cy + head_r], fill=255)

    for mask, color in ((legs_mask, legs), (skin_mask, skin)):
        img[:, np.asarray(mask) > 0] = color[:, None]
    return img


def _pose_keypoints(rng, ranges, theta, scale, shift) -> np.ndarray:
    """Canonical skeleton moved by the garment affine, with arms swung about the shoulders."""
    m = _rotation(theta) * scale
    pts = CANONICAL_KEYPOINTS @ m.T + shift
    for shoulder, elbow, wrist, sign in ((2, 3, 4, -1), (5, 6, 7, 1)):
        swing = _rotation(sign * rng.uniform(0, ranges['arms']))
        for j in (elbow, wrist):
            pts[j] = pts[shoulder] + (pts[j] - pts[shoulder]) @ swing.T
    return pts


def _garment_flow(dims, theta, scale, shift, wave) -> np.ndarray:
    """Backward flow: target pixel t samples the garment at M^-1 (t - shift) + wave(t)."""
    tx, ty = _grid(dims)
    m_inv = np.linalg.inv(_rotation(theta) * scale)
    rel = np.stack([tx - shift[0], ty - shift[1]])
    g = np.einsum('ij,jhw->ihw', m_inv, rel)
    amp, freq, phase = wave
    g[0] += amp * np.sin(2 * np.pi * freq * ty + phase)
    g[1] += 0.5 * amp * np.sin(2 * np.pi * freq * tx + phase)
    return np.stack([g[0] - tx, g[1] - ty])


def max_displacement_px(flow: np.ndarray, support: np.ndarray) -> float:
    """Largest garment-pixel displacement in pixels over a support mask."""
    _, h, w = flow.shape
    if not support.any():
        return 0.0
    dx = flow[0] * (w - 1) / 2
    dy = flow[1] * (h - 1) / 2
    return float(np.hypot(dx, dy)[support].max())


def warp_image(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Backward-warp a (C, H, W) image by a normalized (2, H, W) flow."""
    out = bilinear_sample(Tensor(image[None].astype(np.float64)), Tensor(flow[None].astype(np.float64)))
    return out.data[0]


################################################
# public operations
################################################

def render_keypoint_heatmaps(keypoints: np.ndarray, dims, sigma: float) -> Tensor:
    """One Gaussian channel per keypoint, peak 1; invisible keypoints give zero channels."""
    if sigma <= 0:
        raise DataError(f"Heatmap sigma must be positive, got {sigma}")
    h, w = dims
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    maps = np.zeros((len(kp), h, w), dtype=np.float32)
    for i, (x, y, vis) in enumerate(kp):
        if vis > 0:
            maps[i] = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2 * sigma ** 2))
    return Tensor(maps[None])


def mask_upper_body(person: np.ndarray, keypoints: np.ndarray, margin: Optional[float] = None,
                    fill: float = MASK_FILL):
    """Fill the box around shoulders and hips (dilated by `margin` px) with gray.

    Returns (masked image, (y0, y1, x0, x1)) with inclusive pixel bounds.
    """
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 3)
    _, h, w = person.shape
    if len(kp) <= max(TORSO_KEYPOINTS) or (kp[list(TORSO_KEYPOINTS), 2] <= 0).any():
        raise DataError("Upper-body masking needs visible shoulder and hip keypoints")
    margin = round(0.06 * w) if margin is None else margin
    torso = kp[list(TORSO_KEYPOINTS), :2]
    x0 = max(0, int(np.floor(torso[:, 0].min() - margin)))
    x1 = min(w - 1, int(np.ceil(torso[:, 0].max() + margin)))
    y0 = max(0, int(np.floor(torso[:, 1].min() - margin)))
    y1 = min(h - 1, int(np.ceil(torso[:, 1].max() + margin)))
    masked = person.copy()
    masked[:, y0:y1 + 1, x0:x1 + 1] = fill
    return masked, (y0, y1, x0, x1)


def generate_pair(seed: int, difficulty: str = 'easy', dims=(64, 48), identity_warp: bool = False,
                  texture: Optional[str] = None, frequency: Optional[float] = None) -> SyntheticPair:
    """Deterministic synthetic pair for a seed."""
    if difficulty not in DIFFICULTY_RANGES:
        raise DataError(f"Unknown difficulty '{difficulty}'")
    h, w = dims
    ranges = DIFFICULTY_RANGES[difficulty]
    rng = np.random.default_rng(seed)
    garment, alpha = render_garment(rng, dims, texture, frequency)

    theta = rng.uniform(-ranges['rotation'], ranges['rotation'])
    scale = 1.0 + rng.uniform(-ranges['scale'], ranges['scale'])
    shift = rng.uniform(-ranges['shift'], ranges['shift'], size=2)
    wave = (rng.uniform(0.5, 1.0) * ranges['wave'], rng.uniform(0.5, 1.5), rng.uniform(0, 2 * np.pi))
    if identity_warp:
        theta, scale, shift, wave = 0.0, 1.0, np.zeros(2), (0.0, 1.0, 0.0)

    limit = MAX_DISPLACEMENT * w
    for _ in range(20):
        flow = _garment_flow(dims, theta, scale, shift, wave)
        warped = warp_image(np.concatenate([garment, alpha[None]]), flow)
        support = warped[3] > 0
        if max_displacement_px(flow, support) <= limit:
            break
        theta, scale, shift = 0.8 * theta, 1.0 + 0.8 * (scale - 1.0), 0.8 * shift
        wave = (0.8 * wave[0], wave[1], wave[2])

    points = _pose_keypoints(rng, ranges, theta, scale, shift)
    if identity_warp:
        points = CANONICAL_KEYPOINTS.copy()
    keypoints = np.concatenate([_to_pixels(points, dims), np.ones((NUM_KEYPOINTS, 1))], axis=1)
    body = render_body(rng, keypoints, dims)

    warped_alpha = warped[3:4]
    target = warped_alpha * warped[:3] + (1 - warped_alpha) * body
    masked, box = mask_upper_body(target, keypoints)
    return SyntheticPair(
        garment=garment.astype(np.float32),
        person=target.astype(np.float32),
        person_masked=masked.astype(np.float32),
        keypoints=keypoints.astype(np.float32),
        target=target.astype(np.float32),
        mask_box=box,
        flow=flow.astype(np.float32),
        garment_alpha=alpha.astype(np.float32),
        warped_alpha=warped_alpha[0].astype(np.float32),
        seed=seed,
    )


################################################
# files
################################################

def read_image(path, dims=None) -> np.ndarray:
    with Image.open(path) as img:
        img = img.convert('RGB')
        if dims is not None and img.size != (dims[1], dims[0]):
            img = img.resize((dims[1], dims[0]), Image.Resampling.BICUBIC)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def write_image(path, image: np.ndarray):
    arr = np.asarray(image)
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = arr.transpose(1, 2, 0)
    arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def read_keypoints(path) -> np.ndarray:
    """18 (x, y, confidence) triples from a flat list, nested list or OpenPose JSON."""
    try:
        with open(path) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot read keypoints {path}: {e}")
    if isinstance(raw, dict):
        people = raw.get('people') or []
        if not people:
            raise DataError(f"No people in keypoint file {path}")
        person = people[0]
        raw = person.get('pose_keypoints_2d', person.get('pose_keypoints'))
    try:
        arr = np.asarray(raw, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as e:
        raise DataError(f"Keypoint file {path} is not a numeric array: {e}")
    if arr.size != 3 * NUM_KEYPOINTS:
        raise DataError(f"Keypoint file {path} holds {arr.size} values, expected {3 * NUM_KEYPOINTS}")
    return arr.reshape(NUM_KEYPOINTS, 3).astype(np.float32)


def write_keypoints(path, keypoints: np.ndarray):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    payload = {'people': [{'pose_keypoints_2d': [round(float(v), 3) for v in np.ravel(keypoints)]}]}
    Path(path).write_text(json.dumps(payload))


def write_dataset(root, pairs: Sequence[SyntheticPair]) -> Path:
    """Write pairs in the image/ cloth/ pose/ + pairs.txt layout."""
    root = Path(root)
    lines = []
    for i, pair in enumerate(pairs):
        stem = f"{i:05d}"
        write_image(root / 'image' / f"{stem}_0.png", pair.person)
        write_image(root / 'cloth' / f"{stem}_1.png", pair.garment)
        write_keypoints(root / 'pose' / f"{stem}_0_keypoints.json", pair.keypoints)
        lines.append(f"{stem}_0.png {stem}_1.png")
    (root / 'pairs.txt').write_text('\n'.join(lines) + ('\n' if lines else ''))
    return root


def _pose_file(root: Path, person: str) -> Path:
    stem = Path(person).stem
    for candidate in (f"{stem}_keypoints.json", f"{stem}.json"):
        if (root / 'pose' / candidate).exists():
            return root / 'pose' / candidate
    return root / 'pose' / f"{stem}_keypoints.json"


def _check_image(path: Path, dims) -> Optional[str]:
    if not path.exists():
        return 'missing file'
    try:
        with Image.open(path) as img:
            img.verify()
        with Image.open(path) as img:
            size = img.size
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        return f"corrupt image ({e.__class__.__name__})"
    if dims is not None and size != (dims[1], dims[0]):
        return f"size {size[1]}x{size[0]} != {dims[0]}x{dims[1]}"
    return None


def load_manifest(root, strict: bool = False, split: str = 'test', dims=None) -> DatasetManifest:
    """Discover and validate person/garment/keypoint triples under `root`."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"Dataset root does not exist: {root}")
    pairs_file = root / 'pairs.txt'
    if pairs_file.exists():
        candidates = [tuple(line.split()[:2]) for line in pairs_file.read_text().splitlines()
                      if len(line.split()) >= 2]
    else:
        image_dir = root / 'image'
        names = sorted(p.name for p in image_dir.iterdir()
                       if p.suffix.lower() in IMAGE_SUFFIXES) if image_dir.is_dir() else []
        candidates = [(n, n) for n in names]

    entries, problems = [], []
    for person, cloth in candidates:
        entry = ManifestEntry(person=f"image/{person}", garment=f"cloth/{cloth}",
                              keypoints=str(_pose_file(root, person).relative_to(root)))
        issues = []
        for rel in (entry.person, entry.garment):
            problem = _check_image(root / rel, dims)
            if problem:
                issues.append((rel, problem))
        try:
            read_keypoints(root / entry.keypoints)
        except DataError as e:
            issues.append((entry.keypoints, 'missing file' if not (root / entry.keypoints).exists() else str(e)))
        if issues:
            problems.extend({'item': person, 'file': f, 'problem': p} for f, p in issues)
        else:
            entries.append(entry)

    report = pd.DataFrame(problems, columns=['item', 'file', 'problem'])
    if problems and strict:
        raise DataError(f"{len(report)} dataset problems under {root}:\n{report.to_string(index=False)}")
    if not candidates:
        ProgressIndicators.print_step(f"No image pairs found under {root}", "warning")
    elif problems:
        ProgressIndicators.print_step(f"Excluded {report['item'].nunique()} of {len(candidates)} items under {root}", "warning")
    return DatasetManifest(root=root, entries=entries, split=split, report=report)


def load_triple(person_path, garment_path, keypoint_path, dims=None) -> SyntheticPair:
    """Read person, garment and pose files; the person photo serves as its own ground truth.

    Keypoints are rescaled when the images are resized to `dims`.
    """
    person = read_image(person_path, dims)
    garment = read_image(garment_path, dims)
    keypoints = read_keypoints(keypoint_path)
    if dims is not None:
        with Image.open(person_path) as img:
            src_w, src_h = img.size
        keypoints = keypoints.copy()
        keypoints[:, 0] *= (dims[1] - 1) / max(src_w - 1, 1)
        keypoints[:, 1] *= (dims[0] - 1) / max(src_h - 1, 1)
    masked, box = mask_upper_body(person, keypoints)
    return SyntheticPair(garment=garment, person=person, person_masked=masked,
                         keypoints=keypoints, target=person, mask_box=box)


def load_entry(manifest: DatasetManifest, index: int, dims=None) -> SyntheticPair:
    entry = manifest.entries[index]
    root = manifest.root
    return load_triple(root / entry.person, root / entry.garment, root / entry.keypoints, dims)


################################################
# batching
################################################

@dataclass
class Batch:
    person_masked: Tensor
    keypoints: Tensor
    garment: Tensor
    target: Tensor
    indices: List[int]


def collate(pairs: Sequence[SyntheticPair], sigma: float = 3.0, keypoint_channels: int = NUM_KEYPOINTS) -> Batch:
    """Stack pairs into batch tensors; keypoints become Gaussian heatmaps."""
    if not pairs:
        raise DataError("Cannot collate an empty batch")
    dims = pairs[0].dims
    heat = [render_keypoint_heatmaps(p.keypoints, dims, sigma).data[0][:keypoint_channels] for p in pairs]
    return Batch(
        person_masked=Tensor(np.stack([p.person_masked for p in pairs])),
        keypoints=Tensor(np.stack(heat)),
        garment=Tensor(np.stack([p.garment for p in pairs])),
        target=Tensor(np.stack([p.target for p in pairs])),
        indices=[p.seed if p.seed is not None else -1 for p in pairs],
    )


class SyntheticSource:
    """Indexable collection of generated pairs, cached after first use."""

    def __init__(self, seeds: Sequence[int], difficulty: str = 'easy', dims=(64, 48), **kwargs):
        self.seeds = list(seeds)
        self.difficulty = difficulty
        self.dims = dims
        self.kwargs = kwargs
        self._cache = {}

    def __len__(self):
        return len(self.seeds)

    def __getitem__(self, i: int) -> SyntheticPair:
        if i not in self._cache:
            self._cache[i] = generate_pair(self.seeds[i], self.difficulty, self.dims, **self.kwargs)
        return self._cache[i]


class ManifestSource:

    def __init__(self, manifest: DatasetManifest, dims=None):
        self.manifest = manifest
        self.dims = dims

    def __len__(self):
        return len(self.manifest)

    def __getitem__(self, i: int) -> SyntheticPair:
        pair = load_entry(self.manifest, i, self.dims)
        pair.seed = i
        return pair


class BatchLoader:
    """Batches in a seeded order, assembled by a worker thread into a bounded queue."""

    _DONE = object()

    def __init__(self, source, batch_size: int, seed: int = 0, shuffle: bool = True,
                 prefetch: int = 2, sigma: float = 3.0, keypoint_channels: int = NUM_KEYPOINTS):
        if batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {batch_size}")
        self.source = source
        self.batch_size = batch_size
        self.seed = seed
        self.shuffle = shuffle
        self.prefetch = max(1, prefetch)
        self.sigma = sigma
        self.keypoint_channels = keypoint_channels

    def order(self, epoch: int) -> np.ndarray:
        n = len(self.source)
        if not self.shuffle:
            return np.arange(n)
        return np.random.default_rng([self.seed, epoch]).permutation(n)

    def __len__(self):
        return -(-len(self.source) // self.batch_size)

    def _batches(self, epoch: int, start: int = 0) -> Iterator[Batch]:
        idx = self.order(epoch)[start * self.batch_size:]
        for first in range(0, len(idx), self.batch_size):
            chunk = idx[first:first + self.batch_size]
            yield collate([self.source[int(i)] for i in chunk], self.sigma, self.keypoint_channels)

    def epoch(self, epoch: int, start: int = 0) -> Iterator[Batch]:
        """Batches of `epoch` from batch number `start` on; closing early stops the worker."""
        q: queue.Queue = queue.Queue(maxsize=self.prefetch)
        stop = threading.Event()
        failure = []

        def put(item) -> bool:
            while not stop.is_set():
                try:
                    q.put(item, timeout=0.05)
                    return True
                except queue.Full:
                    continue
            return False

        def worker():
            try:
                for batch in self._batches(epoch, start):
                    if not put(batch):
                        return
            except Exception as e:
                failure.append(e)
            finally:
                put(self._DONE)

        thread = threading.Thread(target=worker, daemon=True)
        thread.start()
        try:
            while True:
                item = q.get()
                if item is self._DONE:
                    break
                yield item
        finally:
            stop.set()
            thread.join()
            while not q.empty():
                q.get_nowait()
        if failure:
            raise failure[0]
