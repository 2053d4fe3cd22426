import numpy as np
import pytest
import torch
from PIL import Image
from hypothesis import given, settings, strategies as st

from cnnbench.data import SplitSpec, scan_dataset, split_manifest
from cnnbench.errors import ClassCountMismatch, DivergedLoss, EmptySplit, InvalidSpec
from cnnbench.models import build_model, load_checkpoint, read_sidecar, save_checkpoint
from cnnbench.synthetic import make_synthetic_dataset
from cnnbench.training import (
    EpochRecord,
    ImageSet,
    TrainingConfig,
    TrainingHistory,
    best_index,
    categorical_cross_entropy,
    early_stop_check,
    predict,
    train,
)


def stop_epoch_oracle(values, patience, lower_is_better=True):
    """Walk the sequence the way a person would: count epochs since the last strict improvement."""
    best, since = None, 0
    for epoch, v in enumerate(values, start=1):
        if best is None or (v < best if lower_is_better else v > best):
            best, since = v, 0
        else:
            since += 1
        if since >= patience:
            return epoch
    return None


@pytest.fixture(scope="module")
def tiny(tmp_path_factory):
    root = make_synthetic_dataset(tmp_path_factory.mktemp("tiny") / "ds", n_per_class=12, size=32, seed=1)
    m = split_manifest(scan_dataset(root), SplitSpec(0.5, 0.25, 0.25, seed=0))
    names = m.class_names
    sets = {s: ImageSet(m.select(s), names, (32, 32)) for s in ("train", "val", "test")}
    return sets


class TestEarlyStopRule:
    def test_examples(self):
        assert not early_stop_check([1.0, 0.9] + [0.95] * 9, patience=10)
        assert early_stop_check([1.0, 0.9] + [0.95] * 10, patience=10)
        assert not early_stop_check([1.0], patience=1)
        assert early_stop_check([1.0, 1.0], patience=1)  # equal is not an improvement
        assert early_stop_check([0.5, 0.4, 0.4], patience=1, monitor="val_accuracy")

    def test_empty(self):
        with pytest.raises(ValueError):
            early_stop_check([], patience=3)

    def test_best_index_first_wins(self):
        assert best_index([3.0, 1.0, 2.0, 1.0]) == 1
        assert best_index([0.2, 0.9, 0.9], monitor="val_accuracy") == 1

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.sampled_from([0.1, 0.2, 0.3, 0.4, 0.5]), min_size=1, max_size=40), st.integers(1, 6),
           st.booleans())
    def test_matches_streaming_oracle(self, values, patience, loss):
        monitor = "val_loss" if loss else "val_accuracy"
        expected = stop_epoch_oracle(values, patience, lower_is_better=loss)
        got = next((e for e in range(1, len(values) + 1)
                    if early_stop_check(values[:e], patience, monitor)), None)
        assert got == expected


def test_cce():
    assert categorical_cross_entropy([[1.0, 0.0], [0.0, 1.0]], [[1, 0], [0, 1]]) == pytest.approx(0.0, abs=1e-9)
    assert categorical_cross_entropy([[0.5, 0.5]], [[1, 0]]) == pytest.approx(np.log(2))


def test_config_validation():
    assert TrainingConfig().problems() == []
    with pytest.raises(InvalidSpec):
        TrainingConfig(batch_size=0, optimizer="sgd").validate()


def scripted_eval(values):
    it = iter(values)
    return lambda handle, ds: (next(it), 0.5)


class TestTrainLoop:
    def test_stops_and_restores_best(self, tiny, tmp_path):
        seq = [1.0, 0.9] + [0.95] * 30
        snaps = {}
        handle = build_model("ResNet18", input_size=(32, 32), seed=0)
        hist, ckpt = train(
            handle, tiny["train"], tiny["val"],
            TrainingConfig(max_epochs=30, patience=10, batch_size=4, learning_rate=1e-3),
            tmp_path / "ck", history_path=tmp_path / "history.csv",
            evaluate_fn=scripted_eval(seq),
            on_epoch_end=lambda e, h: snaps.__setitem__(e, {k: v.clone() for k, v in h.net.state_dict().items()}),
        )
        assert len(hist) == 12 and hist.stopped_early and hist.best_epoch == 2
        assert read_sidecar(ckpt)["epoch"] == 2
        saved = torch.load(ckpt, weights_only=True)
        assert all(torch.equal(saved[k], snaps[2][k]) for k in saved)
        assert not all(torch.equal(snaps[12][k], snaps[2][k]) for k in saved)
        restored = handle.net.state_dict()
        assert all(torch.equal(restored[k], snaps[2][k]) for k in saved)
        back = TrainingHistory.from_csv(tmp_path / "history.csv")
        assert [r.epoch for r in back.records] == list(range(1, 13))
        assert back.best_epoch == 2

    def test_monotone_runs_full_budget(self, tiny, tmp_path):
        handle = build_model("MobileNetV2", input_size=(32, 32))
        hist, _ = train(handle, tiny["train"], tiny["val"],
                        TrainingConfig(max_epochs=4, patience=2, batch_size=6),
                        tmp_path / "ck", evaluate_fn=scripted_eval([1.0, 0.9, 0.8, 0.7]))
        assert len(hist) == 4 and not hist.stopped_early and hist.best_epoch == 4

    def test_deterministic(self, tiny, tmp_path):
        def run(d):
            handle = build_model("ResNet18", input_size=(32, 32), seed=3)
            cfg = TrainingConfig(max_epochs=2, patience=5, batch_size=4, seed=3)
            hist, ckpt = train(handle, tiny["train"], tiny["val"], cfg, d)
            return hist, predict(ckpt, tiny["test"])
        h1, p1 = run(tmp_path / "a")
        h2, p2 = run(tmp_path / "b")
        assert h1.records == h2.records
        np.testing.assert_array_equal(p1.probs, p2.probs)

    def test_empty_split(self, tiny, tmp_path):
        empty = ImageSet([], tiny["train"].class_names, (32, 32))
        with pytest.raises(EmptySplit):
            train(build_model("ResNet18", input_size=(32, 32)), tiny["train"], empty, TrainingConfig(), tmp_path)

    def test_overlap_rejected(self, tiny, tmp_path):
        with pytest.raises(ValueError):
            train(build_model("ResNet18", input_size=(32, 32)), tiny["train"], tiny["train"], TrainingConfig(), tmp_path)

    def test_class_count_mismatch(self, tiny, tmp_path):
        with pytest.raises(ClassCountMismatch):
            train(build_model("ResNet18", num_classes=3, input_size=(32, 32)),
                  tiny["train"], tiny["val"], TrainingConfig(), tmp_path)

    def test_diverged_loss(self, tiny, tmp_path):
        handle = build_model("ResNet18", input_size=(32, 32))
        with pytest.raises(DivergedLoss) as exc:
            train(handle, tiny["train"], tiny["val"], TrainingConfig(max_epochs=5, batch_size=4),
                  tmp_path / "ck", history_path=tmp_path / "h.csv",
                  evaluate_fn=scripted_eval([0.5, float("nan")]))
        assert exc.value.epoch == 2
        assert len(exc.value.history) == 1
        assert (tmp_path / "h.csv").exists()


class TestPredict:
    def test_shape_order_and_batch_invariance(self, tiny, tmp_path):
        handle = build_model("ResNet18", input_size=(32, 32), seed=2)
        ckpt = save_checkpoint(handle, tmp_path / "ck", 1, 0.0)
        outs = [predict(ckpt, tiny["test"], batch_size=b, model_id="r") for b in (1, 2, 32)]
        pm = outs[0]
        assert pm.probs.shape == (len(tiny["test"]), 2)
        assert pm.sample_ids == [s.id for s in tiny["test"].samples]
        np.testing.assert_allclose(pm.probs.sum(axis=1), 1.0, atol=1e-9)
        for other in outs[1:]:
            np.testing.assert_array_equal(other.probs, pm.probs)
        assert load_checkpoint(ckpt).arch == "ResNet18"

    def test_full_test_split_size(self, tmp_path):
        # a 1920-image evaluation split gives a 1920 x 2 matrix
        root = tmp_path / "ds"
        rng = np.random.default_rng(0)
        for c in ("benign", "malignant"):
            (root / c).mkdir(parents=True)
            for i in range(960):
                Image.fromarray(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8)).save(root / c / f"{i}.png")
        m = scan_dataset(root)
        ckpt_handle = build_model("MobileNetV2", input_size=(32, 32))
        ckpt = save_checkpoint(ckpt_handle, tmp_path / "ck", 1, 0.0)
        pm = predict(ckpt, ImageSet(m.samples, m.class_names, (32, 32)), batch_size=256)
        assert pm.probs.shape == (1920, 2)

    def test_empty_eval(self, tiny, tmp_path):
        ckpt = save_checkpoint(build_model("ResNet18", input_size=(32, 32)), tmp_path / "ck", 1, 0.0)
        with pytest.raises(EmptySplit):
            predict(ckpt, ImageSet([], ["benign", "malignant"], (32, 32)))


def test_history_csv_round_trip(tmp_path):
    h = TrainingHistory([EpochRecord(1, 0.7, 0.5, 0.69, 0.55), EpochRecord(2, 0.5, 0.75, 0.6, 0.6)], 2, False)
    path = h.to_csv(tmp_path / "h.csv", config_hash="abc")
    assert "epoch,train_loss,train_accuracy,val_loss,val_accuracy" in path.read_text()
    back = TrainingHistory.from_csv(path)
    assert back.best_epoch == 2 and [r.epoch for r in back.records] == [1, 2]
    assert back.records[0].val_loss == pytest.approx(0.69)
