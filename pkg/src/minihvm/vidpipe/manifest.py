"""Segment manifests: discovery, stats, blank/corrupt screening, TSV round-trip."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rawclip import CorruptedClipError, read_header, read_rawclip, u8_to_frames

DEFAULT_BLANK_STD = 1e-3


@dataclass
class ManifestEntry:
    path: str
    source: str
    n_frames: int
    fps: float

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    rejected: list[tuple[str, str]] = field(default_factory=list)  # (path, reason)

    def __len__(self) -> int:
        return len(self.entries)


def build_manifest(root: str | Path, screen_blank: bool = False,
                   blank_std: float = DEFAULT_BLANK_STD) -> Manifest:
    """Scan root recursively for .hvmclip segments.

    Unreadable files land in manifest.rejected with a reason instead of being
    silently skipped; with screen_blank=True, blank segments are rejected too.
    Raises if no readable segments remain.
    """
    root = Path(root)
    manifest = Manifest()
    paths = sorted(root.rglob("*.hvmclip")) if root.is_dir() else []
    for p in paths:
        try:
            t, c, h, w, fps = read_header(p)
            if screen_blank and detect_blank(p, blank_std):
                manifest.rejected.append((str(p), "blank"))
                continue
        except CorruptedClipError as e:
            manifest.rejected.append((str(p), f"corrupted: {e}"))
            continue
        source = p.parent.name if p.parent != root else root.name
        manifest.entries.append(ManifestEntry(path=str(p), source=source, n_frames=t, fps=fps))
    if not manifest.entries:
        raise ValueError(
            f"build_manifest: zero readable segments under {root} "
            f"({len(manifest.rejected)} rejected)"
        )
    return manifest


def manifest_stats(manifest: Manifest) -> dict:
    """Exact totals/means over entries: hours, mean minutes, per-source hours."""
    if not manifest.entries:
        raise ValueError("manifest_stats: empty manifest")
    durations = np.array([e.duration_s for e in manifest.entries])
    per_source: dict[str, float] = {}
    for e in manifest.entries:
        per_source[e.source] = per_source.get(e.source, 0.0) + e.duration_s / 3600.0
    return {
        "n_segments": len(manifest.entries),
        "total_hours": float(durations.sum() / 3600.0),
        "mean_segment_minutes": float(durations.mean() / 60.0),
        "per_source_hours": per_source,
    }


def detect_blank(segment: str | Path | np.ndarray, std_threshold: float = DEFAULT_BLANK_STD) -> bool:
    """True iff every frame's pixel std (in [0,1] units) is below the threshold.

    A file that cannot be decoded raises CorruptedClipError, a distinct signal
    from blankness; callers remove both.
    """
    if isinstance(segment, (str, Path)):
        frames_u8, _ = read_rawclip(segment)
        frames = u8_to_frames(frames_u8)
    else:
        frames = np.asarray(segment, dtype=np.float64)
    if frames.ndim != 4:
        raise ValueError(f"detect_blank expects (T, C, H, W), got {frames.shape}")
    stds = frames.reshape(frames.shape[0], -1).std(axis=1)
    return bool(np.all(stds < std_threshold))


def write_manifest(path: str | Path, manifest: Manifest) -> None:
    """TSV records (path, source, n_frames, fps); paths relative to the file."""
    import os

    path = Path(path)
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as f:
        for e in manifest.entries:
            p = Path(e.path)
            rel = Path(os.path.relpath(p.resolve(), base)) if p.is_absolute() else p
            f.write(f"{rel.as_posix()}\t{e.source}\t{e.n_frames}\t{e.fps!r}\n")


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    base = path.parent
    manifest = Manifest()
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 tab-separated fields")
            manifest.entries.append(ManifestEntry(
                path=str(base / parts[0]), source=parts[1],
                n_frames=int(parts[2]), fps=float(parts[3]),
            ))
    return manifest
