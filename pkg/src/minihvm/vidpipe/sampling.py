"""Clip sampling at a target frame rate, batching, and spatial augmentations.

Temporal subsampling uses the integer stride nearest to native_fps/target_fps,
so a 30 fps segment subsampled toward 3.75 fps is read every 8th frame.
Pretraining clips get a short-side resize plus center crop; finetuning clips
get one random resized crop and an independent horizontal coin flip applied
consistently to every frame of the clip.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .manifest import ManifestEntry, Manifest
from .rawclip import Clip, read_rawclip, u8_to_frames

TARGET_FPS = 3.75
CLIP_LEN = 16


def stride_for(native_fps: float, target_fps: float = TARGET_FPS) -> int:
    stride = int(round(native_fps / target_fps))
    if stride < 1:
        raise ValueError(
            f"stride_for: native fps {native_fps} too low for target {target_fps}"
        )
    return stride


def admissible_starts(n_frames: int, clip_len: int, stride: int) -> range:
    """Start offsets whose strided read stays inside the segment."""
    last = n_frames - (clip_len - 1) * stride - 1
    return range(0, last + 1) if last >= 0 else range(0)


def sample_clip(
    segment: str | Path | ManifestEntry,
    rng: np.random.Generator,
    target_fps: float = TARGET_FPS,
    clip_len: int = CLIP_LEN,
    resolution: int | None = None,
) -> Clip:
    """Draw one clip from a segment: strided frames from a random valid start."""
    path = segment.path if isinstance(segment, ManifestEntry) else segment
    frames_u8, native_fps = read_rawclip(path)
    stride = stride_for(native_fps, target_fps)
    starts = admissible_starts(frames_u8.shape[0], clip_len, stride)
    if len(starts) == 0:
        raise ValueError(
            f"sample_clip: segment {path} has {frames_u8.shape[0]} frames, "
            f"needs {(clip_len - 1) * stride + 1} at stride {stride}"
        )
    start = int(rng.integers(0, len(starts)))
    picked = frames_u8[start:start + clip_len * stride:stride][:clip_len]
    frames = u8_to_frames(picked)
    if resolution is not None:
        frames = short_side_resize(frames, resolution)
        frames = center_crop(frames, resolution, resolution)
    return Clip(frames=frames, source_id=str(path), start_frame=start,
                fps=native_fps / stride)


# -- batching ------------------------------------------------------------------


def repeat_augment_batch(
    manifest: Manifest,
    rng: np.random.Generator,
    batch_size: int,
    repeat_factor: int,
) -> list[tuple[int, np.random.Generator]]:
    """One mini-batch of (entry index, private rng) pairs.

    batch_size/repeat_factor distinct segments each appear repeat_factor
    times; every occurrence gets an independent substream for clip sampling.
    """
    if batch_size % repeat_factor != 0:
        raise ValueError(f"batch_size {batch_size} not divisible by repeat {repeat_factor}")
    distinct = batch_size // repeat_factor
    if distinct > len(manifest.entries):
        raise ValueError(f"need {distinct} distinct segments, manifest has {len(manifest.entries)}")
    chosen = rng.choice(len(manifest.entries), size=distinct, replace=False)
    streams = rng.spawn(batch_size)
    return [(int(chosen[k // repeat_factor]), streams[k]) for k in range(batch_size)]


def epoch_batches(
    n_entries: int,
    seed: int,
    epoch: int,
    batch_size: int,
    repeat_factor: int,
) -> list[list[tuple[int, np.random.SeedSequence]]]:
    """Batch plan for one epoch as a pure function of (seed, epoch).

    One pass over all entries in a seeded permutation, grouped into batches of
    batch_size/repeat_factor distinct segments x repeat_factor occurrences;
    the partial final batch is dropped. Worker count can never change this.
    """
    if batch_size % repeat_factor != 0:
        raise ValueError(f"batch_size {batch_size} not divisible by repeat {repeat_factor}")
    distinct = batch_size // repeat_factor
    perm = np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n_entries)
    batches = []
    for b in range(n_entries // distinct):
        group = perm[b * distinct:(b + 1) * distinct]
        batch = [
            (int(group[k // repeat_factor]), np.random.SeedSequence([seed, epoch, b, k]))
            for k in range(batch_size)
        ]
        batches.append(batch)
    return batches


# -- spatial ops -----------------------------------------------------------------


def resize_bilinear(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (T, C, H, W) float frames; identity when sizes match."""
    t, c, h, w = frames.shape
    if (h, w) == (out_h, out_w):
        return frames.copy()
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, None, :, None]
    wx = (xs - x0)[None, None, None, :]
    rows0 = frames[:, :, y0, :]
    rows1 = frames[:, :, y1, :]
    interp_y = rows0 * (1.0 - wy) + rows1 * wy
    out = interp_y[:, :, :, x0] * (1.0 - wx) + interp_y[:, :, :, x1] * wx
    return np.clip(out, 0.0, 1.0)


def short_side_resize(frames: np.ndarray, size: int) -> np.ndarray:
    t, c, h, w = frames.shape
    if min(h, w) == size:
        return frames
    if h <= w:
        return resize_bilinear(frames, size, max(1, round(w * size / h)))
    return resize_bilinear(frames, max(1, round(h * size / w)), size)


def center_crop(frames: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    t, c, h, w = frames.shape
    if h < out_h or w < out_w:
        raise ValueError(f"center_crop: {h}x{w} smaller than {out_h}x{out_w}")
    top = (h - out_h) // 2
    left = (w - out_w) // 2
    return frames[:, :, top:top + out_h, left:left + out_w]


def hflip(frames: np.ndarray) -> np.ndarray:
    return frames[:, :, :, ::-1]


def augment_finetune(
    clip: Clip,
    rng: np.random.Generator,
    resolution: int,
    scale_range: tuple[float, float] = (0.2, 1.0),
    ratio_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0),
    flip_prob: float = 0.5,
    max_tries: int = 10,
) -> Clip:
    """Random resized crop plus independent horizontal flip, same for all frames."""
    frames = clip.frames
    t, c, h, w = frames.shape
    crop = None
    for _ in range(max_tries):
        area = h * w * rng.uniform(scale_range[0], scale_range[1])
        ratio = np.exp(rng.uniform(np.log(ratio_range[0]), np.log(ratio_range[1])))
        cw = int(round(np.sqrt(area * ratio)))
        ch = int(round(np.sqrt(area / ratio)))
        if 1 <= cw <= w and 1 <= ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = frames[:, :, top:top + ch, left:left + cw]
            break
    if crop is None:
        side = min(h, w)
        crop = center_crop(frames, side, side)
    out = resize_bilinear(crop, resolution, resolution)
    if rng.random() < flip_prob:
        out = hflip(out)
    return Clip(frames=np.ascontiguousarray(out), source_id=clip.source_id,
                start_frame=clip.start_frame, fps=clip.fps)


def image_to_clip(image: np.ndarray, clip_len: int = CLIP_LEN) -> Clip:
    """Tile a single (C, H, W) frame into a static clip of clip_len frames."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image_to_clip expects (C, H, W), got {img.shape}")
    return Clip(frames=np.repeat(img[None], clip_len, axis=0))
