"""Central-finite-difference verification of analytic gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import ShapeError, Tensor


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare analytic gradients of a scalar fn against central differences.

    Returns the worst relative error max |a - n| / max(1, |a|, |n|) over the
    checked coordinates of every input with requires_grad. When an input has
    more than max_entries elements, a seeded random subset of coordinates is
    perturbed instead of all of them.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    inputs = list(inputs)
    for x in inputs:
        x.zero_grad()
    out = fn(*inputs)
    if out.size != 1:
        raise ShapeError("grad_check: fn must be scalar-valued")
    out.backward()
    analytic = [x.grad if x.requires_grad else None for x in inputs]

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for i, x in enumerate(inputs):
        if not x.requires_grad:
            continue
        a = analytic[i]
        if a is None:
            a = np.zeros_like(x.data)
        flat_idx = np.arange(x.size)
        if max_entries is not None and x.size > max_entries:
            flat_idx = rng.choice(x.size, size=max_entries, replace=False)
        base = x.data.reshape(-1)
        for j in flat_idx:
            perturbed = base.copy()
            perturbed[j] = base[j] + eps
            plus = _eval(fn, inputs, i, perturbed.reshape(x.shape))
            perturbed[j] = base[j] - eps
            minus = _eval(fn, inputs, i, perturbed.reshape(x.shape))
            numeric = (plus - minus) / (2.0 * eps)
            ana = float(a.reshape(-1)[j])
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            worst = max(worst, err)
    return worst


def _eval(fn, inputs: list[Tensor], i: int, data: np.ndarray) -> float:
    swapped = list(inputs)
    swapped[i] = Tensor(data, requires_grad=False)
    return float(fn(*swapped).data)
