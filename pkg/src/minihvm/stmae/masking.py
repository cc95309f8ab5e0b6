"""Unstructured random token masking with an exact floor(ratio * N) count."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaskPlan:
    n_tokens: int
    ratio: float
    masked_idx: np.ndarray   # sorted, disjoint from visible_idx
    visible_idx: np.ndarray  # sorted
    seed: int | None = None

    @property
    def n_masked(self) -> int:
        return len(self.masked_idx)

    @property
    def n_visible(self) -> int:
        return len(self.visible_idx)


def sample_mask(n_tokens: int, ratio: float, rng: int | np.random.Generator) -> MaskPlan:
    """Uniform random subset of exactly floor(ratio * n_tokens) masked tokens."""
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"sample_mask: ratio {ratio} outside [0, 1)")
    if n_tokens < 1:
        raise ValueError(f"sample_mask: n_tokens {n_tokens} < 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = np.random.default_rng(rng) if seed is not None else rng
    n_masked = math.floor(ratio * n_tokens)
    perm = gen.permutation(n_tokens)
    return MaskPlan(
        n_tokens=n_tokens,
        ratio=ratio,
        masked_idx=np.sort(perm[:n_masked]),
        visible_idx=np.sort(perm[n_masked:]),
        seed=None if seed is None else int(seed),
    )


def stack_visible(plans: list[MaskPlan]) -> np.ndarray:
    """(B, V) visible-index matrix for a batch of equal-ratio plans."""
    return np.stack([p.visible_idx for p in plans])


def stack_masked(plans: list[MaskPlan]) -> np.ndarray:
    return np.stack([p.masked_idx for p in plans])
