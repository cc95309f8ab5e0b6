from .geometry import PatchGeometry, patchify, pos_embed, unpatchify
from .masking import MaskPlan, sample_mask
from .model import (
    ModelConfig,
    STMAE,
    desk_config,
    micro_config,
    paper_config_224,
    paper_config_448,
    param_count,
    param_shapes,
    recon_loss,
)

__all__ = [
    "PatchGeometry",
    "patchify",
    "unpatchify",
    "pos_embed",
    "MaskPlan",
    "sample_mask",
    "ModelConfig",
    "STMAE",
    "recon_loss",
    "param_count",
    "param_shapes",
    "desk_config",
    "micro_config",
    "paper_config_224",
    "paper_config_448",
]
