"""Pretraining and finetuning loops: staged learning rates, seeded determinism,
checkpointing at stage boundaries, and line-delimited run records.

Everything the loops consume (batch order, clip starts, mask plans,
augmentations) is a pure function of (seed, epoch, batch index, slot), so two
runs with the same seed and thread count produce identical artifacts, and a
resumed run rejoins the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numcore import AdamW, NonFiniteError, Tensor, cross_entropy, read_arrays, write_arrays
from .stmae.masking import sample_mask
from .stmae.model import ModelConfig, STMAE, param_shapes
from .vidpipe.labels import LabeledDataset
from .vidpipe.manifest import Manifest
from .vidpipe.rawclip import read_rawclip, u8_to_frames
from .vidpipe.sampling import (
    admissible_starts,
    augment_finetune,
    center_crop,
    epoch_batches,
    sample_clip,
    short_side_resize,
    stride_for,
)


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; a diagnostic batch dump was written."""


@dataclass(frozen=True)
class TrainStage:
    epochs: int
    lr: float

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0.0:
            raise ValueError(f"bad stage: {self.epochs} epochs at lr {self.lr}")


def parse_stages(text: str) -> list[TrainStage]:
    """Parse 'E@LR,E@LR,...' (e.g. the published HVM-1 plan '41@1e-4,14@1e-5')."""
    stages = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        epochs, lr = part.split("@")
        stages.append(TrainStage(epochs=int(epochs), lr=float(lr)))
    return stages


def format_stages(stages: list[TrainStage]) -> str:
    return ",".join(f"{s.epochs}@{s.lr!r}" for s in stages)


def total_epochs(stages: list[TrainStage]) -> int:
    return sum(s.epochs for s in stages)


def lr_at_epoch(stages: list[TrainStage], epoch: int) -> float:
    """The active stage's learning rate for a 0-based epoch index."""
    passed = 0
    for s in stages:
        if epoch < passed + s.epochs:
            return s.lr
        passed += s.epochs
    raise IndexError(f"epoch {epoch} beyond schedule of {passed} epochs")


def stage_boundaries(stages: list[TrainStage]) -> list[int]:
    """Cumulative epoch counts at which each stage completes."""
    out, acc = [], 0
    for s in stages:
        acc += s.epochs
        out.append(acc)
    return out


@dataclass
class RunRecord:
    seed: int
    fingerprint: str
    stages: list[TrainStage] = field(default_factory=list)
    epochs: list[tuple[int, float, float]] = field(default_factory=list)  # (epoch, lr, loss)
    evals: list[tuple[str, float]] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)  # paths relative to run dir

    @property
    def losses(self) -> list[float]:
        return [loss for _, _, loss in self.epochs]


def write_runrecord(path: str | Path, record: RunRecord) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"meta\tseed\t{record.seed}\n")
        f.write(f"meta\tfingerprint\t{record.fingerprint}\n")
        for i, s in enumerate(record.stages):
            f.write(f"stage\t{i}\t{s.epochs}\t{s.lr!r}\n")
        for epoch, lr, loss in record.epochs:
            f.write(f"epoch\t{epoch}\t{lr!r}\t{loss!r}\n")
        for tag, value in record.evals:
            f.write(f"eval\t{tag}\t{value!r}\n")
        for ckpt in record.checkpoints:
            f.write(f"ckpt\t{ckpt}\n")


def read_runrecord(path: str | Path) -> RunRecord:
    record = RunRecord(seed=0, fingerprint="")
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if parts[0] == "meta" and parts[1] == "seed":
                record.seed = int(parts[2])
            elif parts[0] == "meta" and parts[1] == "fingerprint":
                record.fingerprint = parts[2]
            elif parts[0] == "stage":
                record.stages.append(TrainStage(epochs=int(parts[2]), lr=float(parts[3])))
            elif parts[0] == "epoch":
                record.epochs.append((int(parts[1]), float(parts[2]), float(parts[3])))
            elif parts[0] == "eval":
                record.evals.append((parts[1], float(parts[2])))
            elif parts[0] == "ckpt":
                record.checkpoints.append(parts[1])
    return record


# -- fingerprints and checkpoints --------------------------------------------------


def run_fingerprint(config: ModelConfig, stages: list[TrainStage], seed: int,
                    batch_size: int, repeat_factor: int, extra: str = "") -> str:
    """Hash of everything that shapes the trajectory; resume requires a match."""
    shapes = ";".join(f"{k}:{v}" for k, v in sorted(param_shapes(config).items()))
    text = "|".join([
        shapes,
        f"ratio={config.mask_ratio!r}", f"norm_pix={config.norm_pix}",
        f"heads={config.enc_heads},{config.dec_heads}",
        format_stages(stages), f"seed={seed}",
        f"batch={batch_size}", f"repeat={repeat_factor}", extra,
    ])
    return hashlib.sha256(text.encode()).hexdigest()


def _meta_arrays(fingerprint: str, seed: int, next_epoch: int,
                 loss_rows: list[tuple[int, float, float]]) -> dict[str, np.ndarray]:
    digest = np.frombuffer(bytes.fromhex(fingerprint), dtype=np.uint8).astype(np.float64)
    rows = np.asarray(loss_rows, dtype=np.float64).reshape(len(loss_rows), 3)
    return {
        "meta.fingerprint": digest,
        "meta.seed": np.asarray([float(seed)]),
        "meta.next_epoch": np.asarray([float(next_epoch)]),
        "meta.loss_series": rows,
    }


def save_checkpoint(path: str | Path, model: STMAE, opt: AdamW,
                    fingerprint: str, seed: int, next_epoch: int,
                    loss_rows: list[tuple[int, float, float]]) -> None:
    arrays = {}
    arrays.update(model.state_arrays())
    arrays.update(opt.state_arrays())
    arrays.update(_meta_arrays(fingerprint, seed, next_epoch, loss_rows))
    write_arrays(path, arrays)


def load_training_state(path: str | Path, expected_fingerprint: str):
    """Validated resume point: (arrays, next_epoch, loss_rows). Hash must match."""
    arrays = read_arrays(path)
    stored = bytes(arrays["meta.fingerprint"].astype(np.uint8)).hex()
    if stored != expected_fingerprint:
        raise ValueError(
            f"resume rejected: checkpoint fingerprint {stored[:12]}... does not match "
            f"run config {expected_fingerprint[:12]}..."
        )
    next_epoch = int(arrays["meta.next_epoch"][0])
    loss_rows = [(int(e), lr, loss) for e, lr, loss in arrays["meta.loss_series"]]
    return arrays, next_epoch, loss_rows


# -- pretraining ---------------------------------------------------------------------


def _load_pretrain_batch(manifest: Manifest, batch, config: ModelConfig,
                         target_fps: float):
    """Clips plus per-clip mask plans for one batch of (entry, seed-seq) slots."""
    g = config.geometry
    clips = np.empty((len(batch), g.frames, g.channels, g.height, g.width))
    plans = []
    for slot, (entry_idx, seedseq) in enumerate(batch):
        rng = np.random.default_rng(seedseq)
        clip = sample_clip(manifest.entries[entry_idx], rng,
                           target_fps=target_fps, clip_len=g.frames,
                           resolution=min(g.height, g.width))
        frames = clip.frames
        if frames.shape[2] != g.height or frames.shape[3] != g.width:
            frames = center_crop(frames, g.height, g.width)
        clips[slot] = frames
        plans.append(sample_mask(g.n_tokens, config.mask_ratio, rng))
    return clips, plans


def pretrain(
    config: ModelConfig,
    manifest: Manifest,
    stages: list[TrainStage],
    seed: int,
    batch_size: int,
    repeat_factor: int = 1,
    out_dir: str | Path = ".",
    target_fps: float = 3.75,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    resume_from: str | Path | None = None,
    progress=None,
) -> RunRecord:
    """Masked-reconstruction pretraining over a segment manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = run_fingerprint(config, stages, seed, batch_size, repeat_factor,
                                  extra=f"fps={target_fps!r};pretrain")
    model = STMAE(config, seed=seed)
    opt = AdamW(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    record = RunRecord(seed=seed, fingerprint=fingerprint, stages=list(stages))
    start_epoch = 0

    if resume_from is not None:
        arrays, start_epoch, prior = load_training_state(resume_from, fingerprint)
        model.load_state_arrays(arrays)
        opt = AdamW.from_state_arrays(arrays, beta1=beta1, beta2=beta2, eps=eps,
                                      weight_decay=weight_decay)
        record.epochs = prior
    else:
        init_path = out_dir / "ckpt_init.stmae"
        save_checkpoint(init_path, model, opt, fingerprint, seed, 0, [])
        record.checkpoints.append(init_path.name)

    boundaries = stage_boundaries(stages)
    n_total = total_epochs(stages)
    for epoch in range(start_epoch, n_total):
        lr = lr_at_epoch(stages, epoch)
        batches = epoch_batches(len(manifest.entries), seed, epoch, batch_size, repeat_factor)
        if not batches:
            raise ValueError("manifest too small for one batch; shrink batch_size")
        losses = []
        for b_idx, batch in enumerate(batches):
            clips, plans = _load_pretrain_batch(manifest, batch, config, target_fps)
            try:
                model.zero_grads()
                loss = model.forward_loss(clips, plans)
                loss.backward()
                model.params = opt.step(model.params, lr)
            except NonFiniteError as e:
                dump = out_dir / "diagnostic_batch.stmae"
                write_arrays(dump, {
                    "clips": clips,
                    "entry_idx": np.asarray([float(i) for i, _ in batch]),
                    "epoch": np.asarray([float(epoch)]),
                    "batch": np.asarray([float(b_idx)]),
                })
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} batch {b_idx}; dump: {dump} ({e})"
                ) from e
            losses.append(loss.item())
        record.epochs.append((epoch, lr, float(np.mean(losses))))
        if progress is not None:
            progress(epoch, lr, float(np.mean(losses)))
        done = epoch + 1
        if done in boundaries:
            k = boundaries.index(done)
            ck = out_dir / f"ckpt_stage{k}.stmae"
            save_checkpoint(ck, model, opt, fingerprint, seed, done, record.epochs)
            record.checkpoints.append(ck.name)

    final = out_dir / "ckpt_final.stmae"
    save_checkpoint(final, model, opt, fingerprint, seed, n_total, record.epochs)
    record.checkpoints.append(final.name)
    write_runrecord(out_dir / "runrecord.tsv", record)
    return record


# -- finetuning / evaluation -----------------------------------------------------------


def load_eval_clip(path: str, config: ModelConfig, target_fps: float = 3.75) -> np.ndarray:
    """Deterministic single view: centered temporal window, center crop."""
    g = config.geometry
    frames_u8, native_fps = read_rawclip(path)
    stride = stride_for(native_fps, target_fps)
    starts = admissible_starts(frames_u8.shape[0], g.frames, stride)
    if len(starts) == 0:
        raise ValueError(f"{path}: too short for evaluation clip")
    start = starts[len(starts) // 2]
    picked = frames_u8[start:start + g.frames * stride:stride][:g.frames]
    frames = u8_to_frames(picked)
    frames = short_side_resize(frames, min(g.height, g.width))
    return center_crop(frames, g.height, g.width)


def _eval_top1(model: STMAE, dataset: LabeledDataset, target_fps: float,
               batch_size: int = 16) -> tuple[float, np.ndarray]:
    logits_all = []
    for lo in range(0, len(dataset), batch_size):
        chunk = dataset.paths[lo:lo + batch_size]
        clips = np.stack([load_eval_clip(p, model.config, target_fps) for p in chunk])
        logits_all.append(model.classify(clips).data)
    logits = np.concatenate(logits_all)
    # stable ranking: ties go to the smallest class index
    pred = np.argsort(-logits, axis=1, kind="stable")[:, 0]
    return float(np.mean(pred == dataset.labels)), logits


def finetune(
    config: ModelConfig,
    train_set: LabeledDataset,
    stages: list[TrainStage],
    seed: int,
    checkpoint: str | Path | None = None,
    eval_set: LabeledDataset | None = None,
    batch_size: int = 8,
    out_dir: str | Path = ".",
    target_fps: float = 3.75,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> RunRecord:
    """Cross-entropy finetuning of encoder + linear head; checkpoint=None is the
    scratch baseline with an identical schedule."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.n_classes is None:
        config = config.with_classes(train_set.n_classes)
    if config.n_classes != train_set.n_classes:
        raise ValueError(f"config has {config.n_classes} classes, data {train_set.n_classes}")
    if train_set.labels.min() < 0 or train_set.labels.max() >= config.n_classes:
        raise ValueError("labels outside [0, n_classes)")
    fingerprint = run_fingerprint(config, stages, seed, batch_size, 1,
                                  extra=f"init={'ckpt' if checkpoint else 'scratch'};finetune")

    model = STMAE(config, seed=seed)
    # the decoder plays no role in classification; train encoder + head only
    model.params = {k: v for k, v in model.params.items() if not k.startswith("dec.")}
    if checkpoint is not None:
        arrays = read_arrays(checkpoint)
        for name in list(model.params):
            if name.startswith("enc."):
                key = f"param.{name}"
                if key not in arrays:
                    raise KeyError(f"checkpoint missing encoder weight '{key}'")
                arr = arrays[key]
                if arr.shape != model.params[name].shape:
                    raise ValueError(f"'{name}': checkpoint shape {arr.shape} mismatched")
                model.params[name] = Tensor(arr, requires_grad=True)

    opt = AdamW(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    record = RunRecord(seed=seed, fingerprint=fingerprint, stages=list(stages))
    g = config.geometry
    resolution = min(g.height, g.width)
    n = len(train_set)

    for epoch in range(total_epochs(stages)):
        lr = lr_at_epoch(stages, epoch)
        perm = np.random.default_rng(np.random.SeedSequence([seed, epoch, 1])).permutation(n)
        # partial final batch dropped, unless the set is smaller than one batch
        n_batches = n // batch_size if n >= batch_size else 1
        losses = []
        for b_idx in range(n_batches):
            take = perm[b_idx * batch_size:(b_idx + 1) * batch_size]
            clips = []
            for slot, i in enumerate(take):
                rng = np.random.default_rng(np.random.SeedSequence([seed, epoch, b_idx, slot, 2]))
                clip = _load_train_clip(train_set.paths[i], config, target_fps, rng)
                clip = augment_finetune(clip, rng, resolution)
                clips.append(clip.frames)
            batch_clips = np.stack(clips)
            labels = train_set.labels[take]
            model.zero_grads()
            logits = model.classify(batch_clips)
            loss = cross_entropy(logits, labels)
            loss.backward()
            model.params = opt.step(model.params, lr)
            losses.append(loss.item())
        record.epochs.append((epoch, lr, float(np.mean(losses))))

    if eval_set is not None:
        top1, _ = _eval_top1(model, eval_set, target_fps)
        record.evals.append(("top1", top1))

    final = out_dir / "ckpt_finetuned.stmae"
    arrays = {}
    arrays.update(model.state_arrays())
    arrays.update(opt.state_arrays())
    arrays.update(_meta_arrays(fingerprint, seed, total_epochs(stages), record.epochs))
    write_arrays(final, arrays)
    record.checkpoints.append(final.name)
    write_runrecord(out_dir / "runrecord.tsv", record)
    return record


def _load_train_clip(path: str, config: ModelConfig, target_fps: float,
                     rng: np.random.Generator):
    """Random temporal window at native resolution; spatial aug comes next."""
    return sample_clip(path, rng, target_fps=target_fps,
                       clip_len=config.geometry.frames, resolution=None)
