"""Spatiotemporal masked autoencoder.

Pretraining path: patchify -> embed visible tokens -> pre-norm ViT encoder ->
project to decoder width -> re-insert mask tokens -> ViT decoder -> per-patch
pixel prediction -> MSE on masked patches only (optionally against per-patch
standardized targets).

Finetune/eval path: encode every token, mean-pool, linear head.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..numcore.tensor import Tensor, attention, gather_rows, gelu, layer_norm, scatter_rows
from .geometry import PatchGeometry, patchify, pos_embed
from .masking import MaskPlan, stack_masked, stack_visible

NORM_PIX_EPS = 1e-6


@dataclass(frozen=True)
class ModelConfig:
    geometry: PatchGeometry
    enc_dim: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 2
    dec_heads: int = 4
    mask_ratio: float = 0.9
    norm_pix: bool = True
    mlp_ratio: int = 4
    n_classes: int | None = None

    def __post_init__(self):
        if self.enc_dim % self.enc_heads != 0 or self.dec_dim % self.dec_heads != 0:
            raise ValueError("model dims must be divisible by their head counts")
        if not 0.0 <= self.mask_ratio < 1.0:
            raise ValueError(f"mask ratio out of range: {self.mask_ratio}")
        if self.n_classes is not None and self.n_classes < 2:
            raise ValueError("n_classes must be >= 2 in finetune mode")

    def with_classes(self, n_classes: int) -> "ModelConfig":
        return replace(self, n_classes=n_classes)


def desk_config(n_classes: int | None = None) -> ModelConfig:
    """Default desk-scale preset: 16x32x32 clips, 2x4x4 patches, 512 tokens."""
    return ModelConfig(
        geometry=PatchGeometry(frames=16, height=32, width=32, channels=3,
                               p_t=2, p_h=4, p_w=4),
        enc_dim=64, enc_depth=4, enc_heads=4,
        dec_dim=32, dec_depth=2, dec_heads=4,
        mask_ratio=0.9, n_classes=n_classes,
    )


def micro_config(n_classes: int | None = None) -> ModelConfig:
    """Smallest sane geometry (16 tokens); for exhaustive gradient checks."""
    return ModelConfig(
        geometry=PatchGeometry(frames=8, height=8, width=8, channels=3,
                               p_t=2, p_h=4, p_w=4),
        enc_dim=16, enc_depth=2, enc_heads=2,
        dec_dim=8, dec_depth=1, dec_heads=2,
        mask_ratio=0.75, n_classes=n_classes,
    )


def paper_config_224() -> ModelConfig:
    """Full-scale geometry at 224x224: ViT-H encoder over 2048 tokens."""
    return ModelConfig(
        geometry=PatchGeometry(frames=16, height=224, width=224, channels=3,
                               p_t=2, p_h=14, p_w=14),
        enc_dim=1280, enc_depth=32, enc_heads=16,
        dec_dim=512, dec_depth=4, dec_heads=16,
        mask_ratio=0.9,
    )


def paper_config_448() -> ModelConfig:
    """Full-scale geometry at 448x448: 8192 tokens, heavier masking."""
    cfg = paper_config_224()
    return replace(
        cfg,
        geometry=PatchGeometry(frames=16, height=448, width=448, channels=3,
                               p_t=2, p_h=14, p_w=14),
        mask_ratio=0.95,
    )


# -- parameters -----------------------------------------------------------------


def _block_shapes(prefix: str, dim: int, mlp_ratio: int) -> dict[str, tuple[int, ...]]:
    hidden = dim * mlp_ratio
    return {
        f"{prefix}.ln1.g": (dim,), f"{prefix}.ln1.b": (dim,),
        f"{prefix}.attn.wq": (dim, dim), f"{prefix}.attn.bq": (dim,),
        f"{prefix}.attn.wk": (dim, dim), f"{prefix}.attn.bk": (dim,),
        f"{prefix}.attn.wv": (dim, dim), f"{prefix}.attn.bv": (dim,),
        f"{prefix}.attn.wo": (dim, dim), f"{prefix}.attn.bo": (dim,),
        f"{prefix}.ln2.g": (dim,), f"{prefix}.ln2.b": (dim,),
        f"{prefix}.mlp.w1": (dim, hidden), f"{prefix}.mlp.b1": (hidden,),
        f"{prefix}.mlp.w2": (hidden, dim), f"{prefix}.mlp.b2": (dim,),
    }


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    g = config.geometry
    shapes: dict[str, tuple[int, ...]] = {
        "enc.embed.w": (g.patch_dim, config.enc_dim),
        "enc.embed.b": (config.enc_dim,),
    }
    for i in range(config.enc_depth):
        shapes.update(_block_shapes(f"enc.b{i}", config.enc_dim, config.mlp_ratio))
    shapes["enc.ln.g"] = (config.enc_dim,)
    shapes["enc.ln.b"] = (config.enc_dim,)

    shapes["dec.embed.w"] = (config.enc_dim, config.dec_dim)
    shapes["dec.embed.b"] = (config.dec_dim,)
    shapes["dec.mask_token"] = (config.dec_dim,)
    for i in range(config.dec_depth):
        shapes.update(_block_shapes(f"dec.b{i}", config.dec_dim, config.mlp_ratio))
    shapes["dec.ln.g"] = (config.dec_dim,)
    shapes["dec.ln.b"] = (config.dec_dim,)
    shapes["dec.pred.w"] = (config.dec_dim, g.patch_dim)
    shapes["dec.pred.b"] = (g.patch_dim,)

    if config.n_classes is not None:
        shapes["head.w"] = (config.enc_dim, config.n_classes)
        shapes["head.b"] = (config.n_classes,)
    return shapes


def param_count(config: ModelConfig) -> dict[str, int]:
    """Exact trainable-parameter counts by component."""
    counts = {"encoder": 0, "decoder": 0, "head": 0}
    for name, shape in param_shapes(config).items():
        n = int(np.prod(shape))
        if name.startswith("enc."):
            counts["encoder"] += n
        elif name.startswith("dec."):
            counts["decoder"] += n
        else:
            counts["head"] += n
    counts["total"] = counts["encoder"] + counts["decoder"] + counts["head"]
    return counts


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    """Gaussian(0, 0.02) weights, zero biases, unit LN gains, zero head."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    params: dict[str, Tensor] = {}
    for name, shape in param_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if name.startswith("head."):
            data = np.zeros(shape)
        elif leaf == "g":
            data = np.ones(shape)
        elif leaf in ("b", "bq", "bk", "bv", "bo", "b1", "b2"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


# -- forward pieces -----------------------------------------------------------------


def _affine_ln(params, prefix: str, x: Tensor) -> Tensor:
    return layer_norm(x) * params[f"{prefix}.g"] + params[f"{prefix}.b"]


def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, s, d = x.shape
    return x.reshape(b, s, heads, d // heads).transpose((0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, s, dh = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b, s, h * dh)


def _block(params, prefix: str, x: Tensor, heads: int) -> Tensor:
    h = _affine_ln(params, f"{prefix}.ln1", x)
    q = _split_heads(h @ params[f"{prefix}.attn.wq"] + params[f"{prefix}.attn.bq"], heads)
    k = _split_heads(h @ params[f"{prefix}.attn.wk"] + params[f"{prefix}.attn.bk"], heads)
    v = _split_heads(h @ params[f"{prefix}.attn.wv"] + params[f"{prefix}.attn.bv"], heads)
    att = _merge_heads(attention(q, k, v))
    x = x + (att @ params[f"{prefix}.attn.wo"] + params[f"{prefix}.attn.bo"])
    h2 = _affine_ln(params, f"{prefix}.ln2", x)
    mlp = gelu(h2 @ params[f"{prefix}.mlp.w1"] + params[f"{prefix}.mlp.b1"])
    return x + (mlp @ params[f"{prefix}.mlp.w2"] + params[f"{prefix}.mlp.b2"])


def run_blocks(params, side: str, x: Tensor, depth: int, heads: int) -> Tensor:
    for i in range(depth):
        x = _block(params, f"{side}.b{i}", x, heads)
    return _affine_ln(params, f"{side}.ln", x)


def standardize_patches(grid: np.ndarray, eps: float = NORM_PIX_EPS) -> np.ndarray:
    """Per-patch zero-mean / unit-variance targets for the norm-pix loss."""
    mu = grid.mean(axis=-1, keepdims=True)
    var = grid.var(axis=-1, keepdims=True)
    return (grid - mu) / np.sqrt(var + eps)


def recon_loss(pred: Tensor, target_grid: np.ndarray, plans: list[MaskPlan],
               norm_pix: bool = True) -> Tensor:
    """MSE over masked patch pixels only; the target is a constant."""
    target = np.asarray(target_grid, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"recon_loss: pred {pred.shape} vs target {target.shape}")
    if any(p.n_masked == 0 for p in plans):
        raise ValueError("recon_loss: empty masked set")
    if norm_pix:
        target = standardize_patches(target)
    masked = stack_masked(plans)
    pred_m = gather_rows(pred, masked)
    target_m = np.take_along_axis(target, masked[:, :, None], axis=1)
    diff = pred_m - Tensor(target_m)
    return (diff * diff).mean()


class STMAE:
    """Bundles config, parameters, and the fixed positional tables."""

    def __init__(self, config: ModelConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        self.enc_pos = pos_embed(config.geometry, config.enc_dim)
        self.dec_pos = pos_embed(config.geometry, config.dec_dim)

    # -- core paths ------------------------------------------------------------

    def _as_batch(self, clips) -> Tensor | np.ndarray:
        if isinstance(clips, Tensor):
            return clips if clips.ndim == 5 else clips.reshape((1,) + clips.shape)
        arr = np.asarray(clips, dtype=np.float64)
        return arr if arr.ndim == 5 else arr[None]

    def encode(self, clips, plans: list[MaskPlan] | None = None) -> Tensor:
        """Token embeddings; with mask plans only visible tokens are processed."""
        x = self._as_batch(clips)
        tokens = patchify(x, self.config.geometry)
        if not isinstance(tokens, Tensor):
            tokens = Tensor(tokens)
        if plans is not None:
            b = tokens.shape[0]
            if len(plans) != b:
                raise ValueError(f"encode: {len(plans)} plans for batch of {b}")
            vis = stack_visible(plans)
            tokens = gather_rows(tokens, vis)
            pos = np.take(self.enc_pos, vis, axis=0)  # (B, V, E)
        else:
            pos = self.enc_pos
        h = tokens @ self.params["enc.embed.w"] + self.params["enc.embed.b"]
        h = h + Tensor(pos)
        return run_blocks(self.params, "enc", h, self.config.enc_depth, self.config.enc_heads)

    def decode_predict(self, latents: Tensor, plans: list[MaskPlan]) -> Tensor:
        """Full-length (B, N, patch_dim) prediction grid from visible latents."""
        n = self.config.geometry.n_tokens
        b = latents.shape[0]
        if len(plans) != b or latents.shape[1] != plans[0].n_visible:
            raise ValueError("decode_predict: latents do not match mask plans")
        vis = stack_visible(plans)
        y = latents @ self.params["dec.embed.w"] + self.params["dec.embed.b"]
        full = scatter_rows(y, vis, n)
        indicator = np.ones((b, n, 1))
        np.put_along_axis(indicator, vis[:, :, None], 0.0, axis=1)
        full = full + Tensor(indicator) * self.params["dec.mask_token"]
        full = full + Tensor(self.dec_pos)
        h = run_blocks(self.params, "dec", full, self.config.dec_depth, self.config.dec_heads)
        return h @ self.params["dec.pred.w"] + self.params["dec.pred.b"]

    def forward_loss(self, clips, plans: list[MaskPlan]) -> Tensor:
        """Masked-reconstruction training loss for a batch of clips."""
        x = self._as_batch(clips)
        target = patchify(x.data if isinstance(x, Tensor) else x, self.config.geometry)
        latents = self.encode(x, plans)
        pred = self.decode_predict(latents, plans)
        return recon_loss(pred, target, plans, norm_pix=self.config.norm_pix)

    def classify(self, clips) -> Tensor:
        """(B, n_classes) logits: unmasked encode, mean pool, linear head."""
        if self.config.n_classes is None:
            raise ValueError("classify: model config has no n_classes")
        h = self.encode(clips, plans=None)
        pooled = h.mean(axis=1)
        return pooled @ self.params["head.w"] + self.params["head.b"]

    def embed(self, clips) -> np.ndarray:
        """(B, enc_dim) mean-pooled encoder features; deterministic, no grads."""
        return self.encode(clips, plans=None).mean(axis=1).data.copy()

    # -- bookkeeping ------------------------------------------------------------

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        out = {}
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"no gradient for parameter '{name}'")
            out[name] = p.grad
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"param.{k}": v.data for k, v in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "param.",
                          strict: bool = True) -> None:
        expected = param_shapes(self.config)
        for name in self.params:
            key = prefix + name
            if key not in arrays:
                if strict:
                    raise KeyError(f"checkpoint missing '{key}'")
                continue
            arr = np.asarray(arrays[key])
            if arr.shape != expected[name]:
                raise ValueError(f"'{name}': checkpoint shape {arr.shape} != {expected[name]}")
            self.params[name] = Tensor(arr, requires_grad=True)
