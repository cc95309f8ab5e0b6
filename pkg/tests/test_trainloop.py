import numpy as np
import pytest

from minihvm import stmae as sm
from minihvm import trainloop as tl
from minihvm.synth import MOVING_TASK, centroid_drift_label, synthgen
from minihvm.vidpipe import read_labels, read_manifest, read_rawclip


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    dataset = synthgen(MOVING_TASK, n=8, seed=0, out_dir=root, resolution=8, n_frames=8)
    manifest = read_manifest(root / "manifest.tsv")
    return root, dataset, manifest


def micro(n_classes=None):
    return sm.micro_config(n_classes)


class TestSchedules:
    def test_paper_schedules_encode_losslessly(self):
        published = {
            "kinetics": [(151, 1e-4), (11, 1e-5)],
            "hvm224": [(41, 1e-4), (14, 1e-5)],
            "hvm448": [(85, 1e-4), (11, 1e-5)],
        }
        for plan in published.values():
            stages = [tl.TrainStage(epochs=e, lr=lr) for e, lr in plan]
            text = tl.format_stages(stages)
            back = tl.parse_stages(text)
            assert back == stages
            assert tl.total_epochs(back) == sum(e for e, _ in plan)

    def test_lr_at_epoch(self):
        stages = tl.parse_stages("3@0.1,2@0.01")
        assert [tl.lr_at_epoch(stages, e) for e in range(5)] == [0.1, 0.1, 0.1, 0.01, 0.01]
        with pytest.raises(IndexError):
            tl.lr_at_epoch(stages, 5)

    def test_stage_validation(self):
        with pytest.raises(ValueError):
            tl.TrainStage(epochs=1, lr=0.0)


class TestPretrain:
    def test_zero_epoch_schedule(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        record = tl.pretrain(micro(), manifest, [], seed=0, batch_size=4,
                             out_dir=tmp_path)
        assert record.epochs == []
        assert record.checkpoints == ["ckpt_init.stmae", "ckpt_final.stmae"]

    def test_deterministic_runs(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("2@0.001")
        r1 = tl.pretrain(micro(), manifest, stages, seed=3, batch_size=4,
                         out_dir=tmp_path / "a")
        r2 = tl.pretrain(micro(), manifest, stages, seed=3, batch_size=4,
                         out_dir=tmp_path / "b")
        assert r1.epochs == r2.epochs
        b1 = (tmp_path / "a" / "ckpt_final.stmae").read_bytes()
        b2 = (tmp_path / "b" / "ckpt_final.stmae").read_bytes()
        assert b1 == b2
        r3 = tl.pretrain(micro(), manifest, stages, seed=4, batch_size=4,
                         out_dir=tmp_path / "c")
        assert r3.epochs != r1.epochs

    def test_lr_staging_logged(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("2@0.001,2@0.0001")
        record = tl.pretrain(micro(), manifest, stages, seed=0, batch_size=8,
                             out_dir=tmp_path)
        lrs = [lr for _, lr, _ in record.epochs]
        assert lrs == [0.001, 0.001, 0.0001, 0.0001]
        for e, (epoch, _, _) in enumerate(record.epochs):
            assert epoch == e

    def test_runrecord_roundtrip(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("1@0.001")
        record = tl.pretrain(micro(), manifest, stages, seed=1, batch_size=4,
                             out_dir=tmp_path)
        back = tl.read_runrecord(tmp_path / "runrecord.tsv")
        assert back.seed == record.seed
        assert back.fingerprint == record.fingerprint
        assert back.stages == record.stages
        assert back.epochs == record.epochs
        assert back.checkpoints == record.checkpoints

    def test_overfit_reduces_loss(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("30@0.003")
        record = tl.pretrain(micro(), manifest, stages, seed=0, batch_size=8,
                             out_dir=tmp_path)
        losses = record.losses
        assert losses[-1] < losses[0] / 2

    def test_divergence_dumps_batch(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("50@1000000.0")
        with pytest.raises(tl.TrainingDivergedError, match="dump"):
            tl.pretrain(micro(), manifest, stages, seed=0, batch_size=8,
                        out_dir=tmp_path)
        assert (tmp_path / "diagnostic_batch.stmae").exists()


class TestResume:
    def test_resume_matches_uninterrupted(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("2@0.001,2@0.0005")
        full = tl.pretrain(micro(), manifest, stages, seed=9, batch_size=4,
                           out_dir=tmp_path / "full")
        # interrupted at the first stage boundary (after epoch 2)
        tl.pretrain(micro(), manifest, tl.parse_stages("2@0.001,2@0.0005")[:1],
                    seed=9, batch_size=4, out_dir=tmp_path / "part")
        resumed = tl.pretrain(micro(), manifest, stages, seed=9, batch_size=4,
                              out_dir=tmp_path / "part2",
                              resume_from=tmp_path / "part" / "ckpt_final.stmae")
        assert resumed.epochs == full.epochs
        b1 = (tmp_path / "full" / "ckpt_final.stmae").read_bytes()
        b2 = (tmp_path / "part2" / "ckpt_final.stmae").read_bytes()
        assert b1 == b2

    def test_resume_with_altered_config_rejected(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("1@0.001")
        tl.pretrain(micro(), manifest, stages, seed=0, batch_size=4,
                    out_dir=tmp_path)
        import dataclasses
        altered = dataclasses.replace(micro(), mask_ratio=0.5)
        with pytest.raises(ValueError, match="fingerprint"):
            tl.pretrain(altered, manifest, stages, seed=0, batch_size=4,
                        out_dir=tmp_path / "x",
                        resume_from=tmp_path / "ckpt_final.stmae")

    def test_resume_at_final_epoch_is_noop(self, tiny_data, tmp_path):
        _, _, manifest = tiny_data
        stages = tl.parse_stages("2@0.001")
        first = tl.pretrain(micro(), manifest, stages, seed=0, batch_size=4,
                            out_dir=tmp_path / "a")
        again = tl.pretrain(micro(), manifest, stages, seed=0, batch_size=4,
                            out_dir=tmp_path / "b",
                            resume_from=tmp_path / "a" / "ckpt_final.stmae")
        assert again.epochs == first.epochs
        assert (tmp_path / "a" / "ckpt_final.stmae").read_bytes() == \
               (tmp_path / "b" / "ckpt_final.stmae").read_bytes()


class TestFinetune:
    def test_zero_epochs_chance_behavior(self, tiny_data, tmp_path):
        root, dataset, _ = tiny_data
        record = tl.finetune(micro(dataset.n_classes), dataset, [], seed=0,
                             eval_set=dataset, out_dir=tmp_path)
        # zero-初 head gives all-zero logits; stable ranking picks class 0
        frac0 = float(np.mean(dataset.labels == 0))
        assert record.evals == [("top1", pytest.approx(frac0))]

    def test_deterministic(self, tiny_data, tmp_path):
        root, dataset, _ = tiny_data
        stages = tl.parse_stages("2@0.001")
        r1 = tl.finetune(micro(dataset.n_classes), dataset, stages, seed=5,
                         eval_set=dataset, out_dir=tmp_path / "a")
        r2 = tl.finetune(micro(dataset.n_classes), dataset, stages, seed=5,
                         eval_set=dataset, out_dir=tmp_path / "b")
        assert r1.epochs == r2.epochs
        assert r1.evals == r2.evals
        assert (tmp_path / "a" / "ckpt_finetuned.stmae").read_bytes() == \
               (tmp_path / "b" / "ckpt_finetuned.stmae").read_bytes()

    def test_init_from_pretrained_checkpoint(self, tiny_data, tmp_path):
        _, dataset, manifest = tiny_data
        tl.pretrain(micro(), manifest, tl.parse_stages("1@0.001"), seed=0,
                    batch_size=4, out_dir=tmp_path / "pre")
        record = tl.finetune(micro(dataset.n_classes), dataset,
                             tl.parse_stages("1@0.001"), seed=0,
                             checkpoint=tmp_path / "pre" / "ckpt_final.stmae",
                             eval_set=dataset, out_dir=tmp_path / "ft")
        assert len(record.epochs) == 1
        assert record.evals[0][0] == "top1"

    def test_label_mismatch_rejected(self, tiny_data, tmp_path):
        _, dataset, _ = tiny_data
        with pytest.raises(ValueError, match="classes"):
            tl.finetune(micro(7), dataset, [], seed=0, out_dir=tmp_path)


class TestSynthData:
    def test_moving_labels_recoverable_by_frame_differencing(self, tiny_data):
        root, dataset, _ = tiny_data
        for path, label in zip(dataset.paths, dataset.labels):
            frames_u8, _ = read_rawclip(path)
            frames = frames_u8.astype(np.float64) / 255.0
            assert centroid_drift_label(frames) == label

    def test_static_task_zero_temporal_variance(self, tmp_path):
        from minihvm.synth import STATIC_TASK
        dataset = synthgen(STATIC_TASK, n=8, seed=1, out_dir=tmp_path,
                           resolution=8, n_frames=8)
        for path in dataset.paths:
            frames_u8, _ = read_rawclip(path)
            assert np.ptp(frames_u8, axis=0).max() == 0

    def test_same_seed_identical_bytes(self, tmp_path):
        d1 = synthgen(MOVING_TASK, n=4, seed=7, out_dir=tmp_path / "a",
                      resolution=8, n_frames=8)
        d2 = synthgen(MOVING_TASK, n=4, seed=7, out_dir=tmp_path / "b",
                      resolution=8, n_frames=8)
        for p1, p2 in zip(d1.paths, d2.paths):
            assert open(p1, "rb").read() == open(p2, "rb").read()
        assert (tmp_path / "a" / "labels.tsv").read_bytes() == \
               (tmp_path / "b" / "labels.tsv").read_bytes()
        assert (tmp_path / "a" / "manifest.tsv").read_bytes() == \
               (tmp_path / "b" / "manifest.tsv").read_bytes()

    def test_n_smaller_than_classes_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="classes"):
            synthgen(MOVING_TASK, n=2, seed=0, out_dir=tmp_path)

    def test_read_labels_roundtrip(self, tiny_data):
        root, dataset, _ = tiny_data
        back = read_labels(root / "labels.tsv")
        assert back.class_names == dataset.class_names
        np.testing.assert_array_equal(back.labels, dataset.labels)
        assert [str(p) for p in back.paths] == [str(p) for p in dataset.paths]
