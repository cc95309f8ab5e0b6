from .rawclip import (
    Clip,
    CorruptedClipError,
    RAWCLIP_MAGIC,
    frames_dir_to_rawclip,
    read_header,
    read_rawclip,
    write_rawclip,
)
from .manifest import (
    Manifest,
    ManifestEntry,
    build_manifest,
    detect_blank,
    manifest_stats,
    read_manifest,
    write_manifest,
)
from .labels import LabeledDataset, read_labels, write_labels
from .sampling import (
    admissible_starts,
    augment_finetune,
    center_crop,
    epoch_batches,
    hflip,
    image_to_clip,
    repeat_augment_batch,
    resize_bilinear,
    sample_clip,
    short_side_resize,
    stride_for,
)

__all__ = [
    "Clip",
    "CorruptedClipError",
    "LabeledDataset",
    "read_labels",
    "write_labels",
    "RAWCLIP_MAGIC",
    "write_rawclip",
    "read_rawclip",
    "read_header",
    "frames_dir_to_rawclip",
    "Manifest",
    "ManifestEntry",
    "build_manifest",
    "manifest_stats",
    "detect_blank",
    "read_manifest",
    "write_manifest",
    "stride_for",
    "admissible_starts",
    "sample_clip",
    "repeat_augment_batch",
    "epoch_batches",
    "augment_finetune",
    "image_to_clip",
    "hflip",
    "center_crop",
    "resize_bilinear",
    "short_side_resize",
]
