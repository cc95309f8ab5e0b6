"""Synthetic labeled clip datasets for desk-scale experiments.

Two tasks:
  * moving-shape-direction: a soft blob drifts with constant velocity in one
    of 4 directions; the label is recoverable from centroid drift alone, so
    tests can re-derive it by frame differencing.
  * static-shape-identity: one of n shapes rendered with zero temporal
    variance.
Clips are written as RawClipFiles with fps equal to the sampling target, so
the temporal stride is 1 and every generated frame is used.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .vidpipe.labels import LabeledDataset, write_labels
from .vidpipe.manifest import build_manifest, write_manifest
from .vidpipe.rawclip import frames_to_u8, write_rawclip

MOVING_TASK = "moving-shape-direction"
STATIC_TASK = "static-shape-identity"

# (dy, dx) per frame, in units of resolution/32
DIRECTIONS = {
    0: (0.0, 1.0),    # right
    1: (0.0, -1.0),   # left
    2: (1.0, 0.0),    # down
    3: (-1.0, 0.0),   # up
}
DIRECTION_NAMES = ["right", "left", "down", "up"]

STATIC_SHAPES = ["disk", "square", "ring", "cross", "hbar", "vbar", "diag", "dot"]


def _blob(res: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))


def render_moving_clip(rng: np.random.Generator, label: int, res: int = 32,
                       n_frames: int = 16) -> np.ndarray:
    """(T, 3, res, res) float clip of a colored blob drifting in one direction."""
    dy, dx = DIRECTIONS[label]
    speed = res / 32.0 * rng.uniform(0.8, 1.2)
    dy, dx = dy * speed, dx * speed
    travel = (n_frames - 1) * speed
    margin = res / 6.0
    lo, hi = margin, res - 1 - margin
    cy = rng.uniform(lo + max(0.0, -dy) * (n_frames - 1), hi - max(0.0, dy) * (n_frames - 1))
    cx = rng.uniform(lo + max(0.0, -dx) * (n_frames - 1), hi - max(0.0, dx) * (n_frames - 1))
    if travel >= hi - lo:
        raise ValueError(f"resolution {res} too small for {n_frames} frames of motion")
    sigma = res / 10.0 * rng.uniform(0.8, 1.2)
    color = rng.uniform(0.4, 1.0, size=3)
    frames = np.empty((n_frames, 3, res, res))
    for t in range(n_frames):
        b = _blob(res, cy + dy * t, cx + dx * t, sigma)
        frames[t] = color[:, None, None] * b[None]
    return np.clip(frames, 0.0, 1.0)


def _shape_mask(name: str, res: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:res, 0:res]
    cy = rng.uniform(res * 0.35, res * 0.65)
    cx = rng.uniform(res * 0.35, res * 0.65)
    r = res * rng.uniform(0.18, 0.28)
    d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    if name == "disk":
        return (d <= r).astype(float)
    if name == "square":
        return ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)).astype(float)
    if name == "ring":
        return ((d <= r) & (d >= 0.55 * r)).astype(float)
    if name == "cross":
        return ((np.abs(yy - cy) <= 0.35 * r) | (np.abs(xx - cx) <= 0.35 * r)).astype(float) \
            * ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r))
    if name == "hbar":
        return ((np.abs(yy - cy) <= 0.4 * r) & (np.abs(xx - cx) <= 1.4 * r)).astype(float)
    if name == "vbar":
        return ((np.abs(xx - cx) <= 0.4 * r) & (np.abs(yy - cy) <= 1.4 * r)).astype(float)
    if name == "diag":
        return (np.abs((yy - cy) - (xx - cx)) <= 0.5 * r).astype(float) \
            * ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r))
    if name == "dot":
        return (d <= 0.45 * r).astype(float)
    raise ValueError(f"unknown shape '{name}'")


def render_static_clip(rng: np.random.Generator, label: int, res: int = 32,
                       n_frames: int = 16) -> np.ndarray:
    mask = _shape_mask(STATIC_SHAPES[label], res, rng)
    color = rng.uniform(0.4, 1.0, size=3)
    frame = color[:, None, None] * mask[None]
    return np.repeat(np.clip(frame, 0.0, 1.0)[None], n_frames, axis=0)


def centroid_drift_label(frames: np.ndarray) -> int:
    """Oracle: recover the motion class from first/last intensity centroids."""
    def centroid(frame):
        w = frame.sum(axis=0)  # over channels
        total = w.sum()
        yy, xx = np.mgrid[0:w.shape[0], 0:w.shape[1]]
        return (yy * w).sum() / total, (xx * w).sum() / total
    y0, x0 = centroid(frames[0])
    y1, x1 = centroid(frames[-1])
    dy, dx = y1 - y0, x1 - x0
    if abs(dx) >= abs(dy):
        return 0 if dx > 0 else 1
    return 2 if dy > 0 else 3


def synthgen(
    task: str,
    n: int,
    seed: int,
    out_dir: str | Path,
    resolution: int = 32,
    n_frames: int = 16,
    fps: float = 3.75,
    n_classes: int | None = None,
) -> LabeledDataset:
    """Write n labeled RawClipFile segments plus manifest and label files."""
    if task == MOVING_TASK:
        names = DIRECTION_NAMES
    elif task == STATIC_TASK:
        names = STATIC_SHAPES[:n_classes or 4]
        if n_classes is not None and n_classes > len(STATIC_SHAPES):
            raise ValueError(f"static task supports at most {len(STATIC_SHAPES)} classes")
    else:
        raise ValueError(f"unknown task '{task}' (try {MOVING_TASK} or {STATIC_TASK})")
    k = len(names)
    if n < k:
        raise ValueError(f"n={n} smaller than {k} classes")

    out_dir = Path(out_dir)
    clip_dir = out_dir / "clips"
    clip_dir.mkdir(parents=True, exist_ok=True)
    paths, labels = [], []
    for i in range(n):
        label = i % k  # balanced classes
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        if task == MOVING_TASK:
            frames = render_moving_clip(rng, label, resolution, n_frames)
        else:
            frames = render_static_clip(rng, label, resolution, n_frames)
        path = clip_dir / f"clip_{i:05d}.hvmclip"
        write_rawclip(path, frames_to_u8(frames), fps)
        paths.append(str(path))
        labels.append(label)

    dataset = LabeledDataset(paths=paths, labels=np.asarray(labels, dtype=np.int64),
                             class_names=list(names))
    write_labels(out_dir / "labels.tsv", dataset)
    manifest = build_manifest(out_dir)
    write_manifest(out_dir / "manifest.tsv", manifest)
    return dataset
