"""Spatiotemporal patch geometry: token grids, (un)patchify, positional tables.

A clip of shape (T, C, H, W) is cut into p_t x p_h x p_w boxes; token rows
are ordered t-major, then h, then w, and each row flattens its box in
(p_t, C, p_h, p_w) order, so with a single whole-clip patch the row equals
the flattened clip. unpatchify is the exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore.tensor import Tensor, reshape, transpose


@dataclass(frozen=True)
class PatchGeometry:
    frames: int
    height: int
    width: int
    channels: int
    p_t: int
    p_h: int
    p_w: int

    def __post_init__(self):
        for name, total, p in (("frames", self.frames, self.p_t),
                               ("height", self.height, self.p_h),
                               ("width", self.width, self.p_w)):
            if p < 1 or total < 1 or total % p != 0:
                raise ValueError(f"geometry: {name}={total} not divisible by patch {p}")
        if self.channels < 1:
            raise ValueError("geometry: channels must be positive")

    @property
    def n_t(self) -> int:
        return self.frames // self.p_t

    @property
    def n_h(self) -> int:
        return self.height // self.p_h

    @property
    def n_w(self) -> int:
        return self.width // self.p_w

    @property
    def n_tokens(self) -> int:
        return self.n_t * self.n_h * self.n_w

    @property
    def patch_dim(self) -> int:
        return self.p_t * self.p_h * self.p_w * self.channels


def patchify(clip, geom: PatchGeometry):
    """(T, C, H, W) -> (N, patch_dim), or batched (B, ...) -> (B, N, patch_dim).

    Works on numpy arrays and on autodiff Tensors (built from reshape/transpose,
    so gradients pass through exactly).
    """
    is_tensor = isinstance(clip, Tensor)
    shape = clip.shape
    batched = len(shape) == 5
    if len(shape) not in (4, 5):
        raise ValueError(f"patchify: expected (T,C,H,W) or (B,T,C,H,W), got {shape}")
    t, c, h, w = shape[-4:]
    if (t, c, h, w) != (geom.frames, geom.channels, geom.height, geom.width):
        raise ValueError(f"patchify: clip {shape[-4:]} does not match geometry")
    lead = shape[:1] if batched else ()
    split = lead + (geom.n_t, geom.p_t, c, geom.n_h, geom.p_h, geom.n_w, geom.p_w)
    off = 1 if batched else 0
    axes = tuple(range(off)) + tuple(off + a for a in (0, 3, 5, 1, 2, 4, 6))
    final = lead + (geom.n_tokens, geom.patch_dim)
    if is_tensor:
        return reshape(transpose(reshape(clip, split), axes), final)
    grid = np.asarray(clip).reshape(split).transpose(axes)
    return np.ascontiguousarray(grid).reshape(final)


def unpatchify(grid, geom: PatchGeometry):
    """Exact inverse of patchify; accepts (N, D), (B, N, D); numpy or Tensor."""
    is_tensor = isinstance(grid, Tensor)
    shape = grid.shape
    batched = len(shape) == 3
    if len(shape) not in (2, 3):
        raise ValueError(f"unpatchify: expected (N, D) or (B, N, D), got {shape}")
    if shape[-2] != geom.n_tokens or shape[-1] != geom.patch_dim:
        raise ValueError(f"unpatchify: grid {shape[-2:]} does not match geometry")
    lead = shape[:1] if batched else ()
    split = lead + (geom.n_t, geom.n_h, geom.n_w, geom.p_t, geom.channels, geom.p_h, geom.p_w)
    off = 1 if batched else 0
    # inverse of the (0,3,5,1,2,4,6) permutation used in patchify
    axes = tuple(range(off)) + tuple(off + a for a in (0, 3, 4, 1, 5, 2, 6))
    final = lead + (geom.frames, geom.channels, geom.height, geom.width)
    if is_tensor:
        return reshape(transpose(reshape(grid, split), axes), final)
    clip = np.asarray(grid).reshape(split).transpose(axes)
    return np.ascontiguousarray(clip).reshape(final)


def _sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    """1D sinusoidal table; the unit-frequency sine keeps integer rows distinct."""
    half = (dim + 1) // 2
    omega = 1.0 / (10000.0 ** (np.arange(half) / half))
    ang = positions[:, None] * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, :dim]


def pos_embed(geom: PatchGeometry, dim: int) -> np.ndarray:
    """Fixed separable sinusoidal position table, one row per token.

    dim splits as temporal dim/2 plus dim/4 for each spatial axis, so dim must
    be divisible by 4. Deterministic; distinct grid positions give distinct rows.
    """
    if dim % 4 != 0 or dim < 4:
        raise ValueError(f"pos_embed: dim {dim} must be a positive multiple of 4")
    d_t, d_h, d_w = dim // 2, dim // 4, dim // 4
    emb_t = _sincos_1d(np.arange(geom.n_t, dtype=np.float64), d_t)
    emb_h = _sincos_1d(np.arange(geom.n_h, dtype=np.float64), d_h)
    emb_w = _sincos_1d(np.arange(geom.n_w, dtype=np.float64), d_w)
    rows = np.empty((geom.n_tokens, dim))
    i = 0
    for it in range(geom.n_t):
        for ih in range(geom.n_h):
            for iw in range(geom.n_w):
                rows[i, :d_t] = emb_t[it]
                rows[i, d_t:d_t + d_h] = emb_h[ih]
                rows[i, d_t + d_h:] = emb_w[iw]
                i += 1
    return rows
