import numpy as np
import pytest

import g2sd


def test_synth_dataset_is_deterministic():
    a = g2sd.synth_dataset("gaussian-blobs", 3, 40)
    b = g2sd.synth_dataset("gaussian-blobs", 3, 40)
    assert a["images"].shape == (40, 32, 32, 3)
    assert np.array_equal(a["images"], b["images"])
    assert np.bincount(a["labels"]).max() - np.bincount(a["labels"]).min() <= 1
    with pytest.raises(g2sd.ConfigError):
        g2sd.synth_dataset("nope", 0, 40)


def test_linear_cka_properties():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 8))
    q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
    assert g2sd.linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)
    assert g2sd.linear_cka(x, 3.0 * x @ q) == pytest.approx(1.0, abs=1e-6)
    y = rng.normal(size=(100, 5))
    assert abs(g2sd.linear_cka(x, y) - g2sd.linear_cka(y, x)) < 1e-10
    with pytest.raises(g2sd.NumericError):
        g2sd.linear_cka(np.ones((10, 2)), y[:10])


def test_masks_and_labels():
    assert g2sd.masked_count(64, 0.75) == 48
    for visible, masked in g2sd.sample_masks(4, 16, 0.5, seed=1):
        assert sorted(visible + masked) == list(range(16))
        assert len(masked) == 8
    assert g2sd.hard_label(np.array([[0.1, 0.9], [2.0, 2.0]], dtype=np.float32)) == [1, 0]


def test_config_overrides():
    cfg = g2sd.resolve_config({"generic.mask_ratio": 0.5})
    assert float(cfg["generic.mask_ratio"]) == 0.5
    assert set(cfg) == set(g2sd.default_config())
    with pytest.raises(g2sd.ConfigError):
        g2sd.resolve_config({"generic.unknown": 1})


def test_tiny_pipeline_and_checkpoints(tmp_path):
    overrides = {
        "data.image_size": 16, "data.train_size": 40, "data.pool_size": 40, "data.test_size": 20,
        "teacher.depth": 1, "teacher.dim": 16, "teacher.heads": 2, "teacher.decoder_depth": 2,
        "teacher.decoder_dim": 16, "teacher.decoder_heads": 2, "student.depth": 1, "student.dim": 16,
        "student.heads": 2, "pretrain.epochs": 1, "pretrain.batch_size": 20, "finetune.epochs": 1,
        "finetune.batch_size": 20, "generic.epochs": 1, "generic.batch_size": 20, "generic.decoder_depth": 1,
        "generic.decoder_dim": 16, "generic.decoder_heads": 2, "generic.target_layer": 1,
        "specific.epochs": 1, "specific.batch_size": 20, "pipeline.seeds": "0", "teacher.patch": 4,
    }
    report = g2sd.run_pipeline(str(tmp_path), overrides)
    arms = {r["arm"] for r in report["rows"]}
    assert {"scratch", "specific-only", "generic-only", "G2SD"} <= arms
    for r in report["rows"]:
        assert 0.0 <= r["accuracy"] <= 1.0

    spec, tensors = g2sd.load_checkpoint(str(tmp_path / "teacher_classifier.ckpt"))
    assert "kind = classifier" in spec
    g2sd.save_checkpoint(str(tmp_path / "copy.ckpt"), spec, tensors)
    assert (tmp_path / "copy.ckpt").read_bytes() == (tmp_path / "teacher_classifier.ckpt").read_bytes()

    model = g2sd.Classifier.load(str(tmp_path / "copy.ckpt"))
    test = g2sd.synth_dataset("striped-shapes", 5, 20, "test", 16)
    preds = model.predict(test["images"])
    assert len(preds) == 20 and all(0 <= p < model.num_classes for p in preds)
    acc = model.accuracy(test["images"], test["labels"])
    assert acc == pytest.approx(np.mean(np.array(preds) == test["labels"]))
    assert model.features(test["images"]).shape == (20, 16)
    curve = model.occlusion_curve(test["images"], test["labels"])
    assert curve[0]["cka"] == pytest.approx(1.0)
    assert [p["dropped"] for p in curve] == [0, 4, 8, 12]


def test_corrupted_checkpoint_rejected(tmp_path):
    path = tmp_path / "a.ckpt"
    g2sd.save_checkpoint(str(path), "kind = test", {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
    data = bytearray(path.read_bytes())
    data[-8] ^= 1
    path.write_bytes(bytes(data))
    with pytest.raises(g2sd.CheckpointError):
        g2sd.load_checkpoint(str(path))
