"""Bit-exact raw clip storage.

A RawClipFile holds one video segment as uncompressed u8 pixels:
    magic "HVMCLIP1" (8 bytes)
    T, C, H, W as u32 little-endian
    fps as f32 little-endian
    payload: T*C*H*W bytes, frame-major (T, C, H, W) row-major order
This stands in for real codecs; a converter from directories of image
frames is provided for bringing in external footage.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RAWCLIP_MAGIC = b"HVMCLIP1"
_HEADER = struct.Struct("<4If")


class CorruptedClipError(IOError):
    """Segment file is unreadable (bad magic, truncated payload, ...)."""


@dataclass
class Clip:
    """A T x C x H x W block of pixels in [0, 1], the unit fed to the model."""

    frames: np.ndarray
    source_id: str = ""
    start_frame: int = 0
    fps: float = 3.75

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float64)
        if f.ndim != 4:
            raise ValueError(f"Clip frames must be (T, C, H, W), got {f.shape}")
        if f.size and (f.min() < 0.0 or f.max() > 1.0):
            raise ValueError("Clip pixel values must lie in [0, 1]")
        self.frames = f

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape


def write_rawclip(path: str | Path, frames_u8: np.ndarray, fps: float) -> None:
    frames_u8 = np.ascontiguousarray(frames_u8, dtype=np.uint8)
    if frames_u8.ndim != 4:
        raise ValueError(f"rawclip frames must be (T, C, H, W), got {frames_u8.shape}")
    t, c, h, w = frames_u8.shape
    with open(path, "wb") as f:
        f.write(RAWCLIP_MAGIC)
        f.write(_HEADER.pack(t, c, h, w, float(fps)))
        f.write(frames_u8.tobytes())


def read_header(path: str | Path) -> tuple[int, int, int, int, float]:
    """Return (T, C, H, W, fps); raises CorruptedClipError on malformed files."""
    path = Path(path)
    try:
        with open(path, "rb") as f:
            magic = f.read(8)
            if magic != RAWCLIP_MAGIC:
                raise CorruptedClipError(f"{path}: bad magic")
            header = f.read(_HEADER.size)
            if len(header) != _HEADER.size:
                raise CorruptedClipError(f"{path}: truncated header")
            t, c, h, w, fps = _HEADER.unpack(header)
    except OSError as e:
        raise CorruptedClipError(f"{path}: {e}") from e
    if min(t, c, h, w) < 1 or not np.isfinite(fps) or fps <= 0:
        raise CorruptedClipError(f"{path}: invalid header {(t, c, h, w, fps)}")
    return t, c, h, w, fps


def read_rawclip(path: str | Path) -> tuple[np.ndarray, float]:
    """Return (u8 frames (T, C, H, W), fps)."""
    path = Path(path)
    t, c, h, w, fps = read_header(path)
    expected = t * c * h * w
    blob = path.read_bytes()[8 + _HEADER.size:]
    if len(blob) != expected:
        raise CorruptedClipError(f"{path}: payload {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype=np.uint8).reshape(t, c, h, w).copy(), fps


def frames_to_u8(frames: np.ndarray) -> np.ndarray:
    """Quantize [0, 1] floats to u8 (round-to-nearest)."""
    f = np.asarray(frames, dtype=np.float64)
    return np.clip(np.rint(f * 255.0), 0, 255).astype(np.uint8)


def u8_to_frames(frames_u8: np.ndarray) -> np.ndarray:
    return np.asarray(frames_u8, dtype=np.float64) / 255.0


def frames_dir_to_rawclip(frame_dir: str | Path, out_path: str | Path, fps: float) -> int:
    """Convert a directory of image frames (sorted by name) into one RawClipFile.

    Returns the number of frames written.
    """
    from PIL import Image

    frame_dir = Path(frame_dir)
    names = sorted(p for p in frame_dir.iterdir()
                   if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not names:
        raise ValueError(f"{frame_dir}: no image frames found")
    frames = []
    for p in names:
        img = np.asarray(Image.open(p).convert("RGB"))  # (H, W, 3) u8
        frames.append(img.transpose(2, 0, 1))
    stack = np.stack(frames)  # (T, C, H, W)
    write_rawclip(out_path, stack, fps)
    return stack.shape[0]
