"""minihvm: desk-scale spatiotemporal masked-autoencoder video pipeline.

Subpackages:
    numcore   -- dense float64 tensors with reverse-mode autodiff and AdamW
    vidpipe   -- raw clip storage, segment manifests, clip sampling, augmentations
    stmae     -- patch geometry, random masking, MAE encoder/decoder and losses
    evalkit   -- few-shot metrics, scaling-law fits, exact t-SNE, results registry
    trainloop -- pretraining/finetuning loops with staged LR schedules
"""

__version__ = "0.1.0"
