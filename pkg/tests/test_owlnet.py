import numpy as np
import pytest

from owleye.imaging import Color, RasterImage
from owleye.manifest import ManifestError
from owleye.owlnet import (CheckpointError, ConfigError, NetworkConfig,
                           NumericError, TrainConfig, build_network,
                           check_split_disjoint, classify, evaluate,
                           format_metric, load_checkpoint, load_dataset,
                           precision_recall_f1, preprocess, save_checkpoint,
                           train, train_accuracy)


def tiny_screen(buggy, seed):
    r = np.random.default_rng(seed)
    px = np.full((96, 64, 3), 240, np.uint8)
    px[8:24, 8:56] = [60, 90, 200]
    if buggy:
        x, y = int(r.integers(4, 30)), int(r.integers(30, 70))
        px[y:y + 18, x:x + 24] = 10
    return RasterImage(px)


def rows_for(app_lo, app_hi, buggy_seed0=500):
    out = []
    for i in range(app_lo, app_hi):
        out.append({"image": tiny_screen(False, i), "label": "clean",
                    "source_id": f"app{i:03d}_s0", "category": None})
        out.append({"image": tiny_screen(True, buggy_seed0 + i), "label": "buggy",
                    "source_id": f"app{i:03d}_s1", "category": "missing_image"})
    return out


class TestNetworkConfig:
    def test_paper_preset_invariants(self):
        cfg = NetworkConfig.paper()
        assert (cfg.input_h, cfg.input_w) == (768, 448)
        assert list(cfg.conv_channels) == [16] * 4 + [32] * 2 + [64] * 2 + [128] * 4
        assert sorted(cfg.pool_after) == [2, 4, 6, 8, 10, 12]
        assert list(cfg.fc_sizes) == [4096, 1024, 128, 2]
        assert cfg.bn_momentum == 0.1
        assert cfg.feature_count() == 10752

    def test_paper_shape_chain(self):
        chain = dict(NetworkConfig.paper().shape_chain())
        assert chain["input"] == (3, 768, 448)
        assert chain["conv1"] == (16, 768, 448)
        assert chain["pool@conv2"] == (16, 384, 224)
        assert chain["pool@conv12"] == (128, 12, 7)
        assert chain["flatten"] == (10752,)
        assert chain["fc1"] == (4096,)
        assert chain["fc4"] == (2,)

    def test_desk_preset(self):
        cfg = NetworkConfig.desk()
        assert (cfg.input_h, cfg.input_w) == (192, 128)
        assert cfg.feature_count() == 32 * 3 * 2

    def test_non_divisible_input_rejected(self):
        cfg = NetworkConfig.desk()
        bad = NetworkConfig(input_h=192, input_w=112,
                            conv_channels=cfg.conv_channels,
                            pool_after=cfg.pool_after, fc_sizes=cfg.fc_sizes,
                            bn_momentum=cfg.bn_momentum, preset="desk")
        with pytest.raises(ConfigError):
            bad.validate()

    def test_wrong_counts_rejected(self):
        cfg = NetworkConfig.desk()
        with pytest.raises(ConfigError):
            NetworkConfig(192, 128, cfg.conv_channels[:11], cfg.pool_after,
                          cfg.fc_sizes, 0.1, "desk").validate()
        with pytest.raises(ConfigError):
            NetworkConfig(192, 128, cfg.conv_channels, (2, 4, 6, 8, 10),
                          cfg.fc_sizes, 0.1, "desk").validate()
        with pytest.raises(ConfigError):
            NetworkConfig(192, 128, cfg.conv_channels, cfg.pool_after,
                          (256, 64, 32, 3), 0.1, "desk").validate()

    def test_round_trip_dict(self):
        cfg = NetworkConfig.paper()
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            NetworkConfig.from_preset("huge")


class TestBuildAndForward:
    def test_probs_sum_to_one(self):
        net = build_network(NetworkConfig.desk(), seed=0)
        x = np.random.default_rng(0).random((1, 3, 192, 128)).astype(np.float32)
        logits = net.forward(x)
        from owleye.nncore import softmax
        assert softmax(logits).sum() == pytest.approx(1.0)

    def test_loss_near_ln2_at_init(self):
        from owleye.nncore import softmax_cross_entropy
        net = build_network(NetworkConfig.desk(), seed=1)
        x = np.random.default_rng(1).random((8, 3, 192, 128)).astype(np.float32)
        labels = np.array([0, 1] * 4)
        loss, _, _ = softmax_cross_entropy(net.forward(x, training=True), labels)
        assert abs(loss - np.log(2)) < 0.2

    def test_seeded_build_is_reproducible(self):
        a = build_network(NetworkConfig.desk(), seed=7)
        b = build_network(NetworkConfig.desk(), seed=7)
        for k, v in a.params().items():
            assert (v == b.params()[k]).all()


class TestPreprocess:
    def test_constant_image_standardizes(self):
        cfg = NetworkConfig.desk()
        img = RasterImage.filled(10, 10, Color(0, 0, 0))
        mean = np.array([0.5, 0.4, 0.3])
        std = np.array([0.2, 0.2, 0.2])
        out = preprocess(img, cfg, mean, std)
        assert out.shape == (3, 192, 128)
        for c in range(3):
            assert np.allclose(out[c], (0.0 - mean[c]) / std[c])

    def test_landscape_rotated_before_resize(self):
        cfg = NetworkConfig.desk()
        land = RasterImage.filled(80, 40, Color(10, 10, 10))
        port = RasterImage.filled(40, 80, Color(10, 10, 10))
        a = preprocess(land, cfg)
        b = preprocess(port, cfg)
        assert a.shape == b.shape == (3, 192, 128)

    def test_identity_resize_at_native_dims(self):
        cfg = NetworkConfig.desk()
        rng = np.random.default_rng(2)
        img = RasterImage(rng.integers(0, 256, (192, 128, 3)).astype(np.uint8))
        out = preprocess(img, cfg)
        assert np.allclose(out, img.pixels.transpose(2, 0, 1) / 255.0)


class TestTrain:
    def test_two_sample_overfit(self):
        net = build_network(NetworkConfig.desk(), seed=0)
        rows = rows_for(0, 1)
        net, hist = train(net, rows, rows_for(10, 11),
                          TrainConfig(epochs=12, batch_size=2, lr=0.02, seed=0))
        assert hist[-1]["loss"] < 0.05
        assert train_accuracy(net, rows) == 1.0

    def test_lr_zero_leaves_params_unchanged(self):
        net = build_network(NetworkConfig.desk(), seed=3)
        before = {k: v.copy() for k, v in net.params().items()}
        rows = rows_for(0, 2)
        net, _ = train(net, rows, rows_for(10, 11), TrainConfig(epochs=2,
                                                                batch_size=2,
                                                                lr=0.0, seed=0))
        after = net.params()
        for k in before:
            assert (before[k] == after[k]).all(), k

    def test_history_deterministic(self):
        rows = rows_for(0, 3)
        val = rows_for(20, 22)
        hyper = TrainConfig(epochs=3, batch_size=4, lr=0.01, seed=5)
        _, h1 = train(build_network(NetworkConfig.desk(), seed=2), rows, val, hyper)
        _, h2 = train(build_network(NetworkConfig.desk(), seed=2), rows, val, hyper)
        assert h1 == h2

    def test_empty_manifest_rejected(self):
        net = build_network(NetworkConfig.desk(), seed=0)
        with pytest.raises(ManifestError):
            train(net, [], rows_for(0, 1), TrainConfig(epochs=1))

    def test_split_leak_rejected(self):
        net = build_network(NetworkConfig.desk(), seed=0)
        rows = rows_for(0, 2)
        leaky_val = [{"image": tiny_screen(False, 9), "label": "clean",
                      "source_id": "app001_s7", "category": None}]
        with pytest.raises(ManifestError):
            train(net, rows, leaky_val, TrainConfig(epochs=1))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts_with_diagnostics(self):
        net = build_network(NetworkConfig.desk(), seed=0)
        fc = net.layers[-1]
        fc.w[0, 0] = np.inf
        with pytest.raises(NumericError) as exc:
            train(net, rows_for(0, 2), rows_for(10, 11), TrainConfig(epochs=1))
        assert exc.value.epoch == 0
        assert exc.value.batch == 0
        assert exc.value.layer_norms

    def test_lr_decay_schedule(self):
        hyper = TrainConfig(lr=0.01, decay_epochs=(60, 85), decay_factor=0.1)
        assert hyper.lr_at(0) == pytest.approx(0.01)
        assert hyper.lr_at(59) == pytest.approx(0.01)
        assert hyper.lr_at(60) == pytest.approx(0.001)
        assert hyper.lr_at(84) == pytest.approx(0.001)
        assert hyper.lr_at(85) == pytest.approx(0.0001)

    def test_best_epoch_restored(self):
        # train long enough that the last epoch may not be the best; the
        # returned net must score the best recorded validation F1
        rows = rows_for(0, 4)
        val = rows_for(30, 33)
        net, hist = train(build_network(NetworkConfig.desk(), seed=1), rows, val,
                          TrainConfig(epochs=6, batch_size=4, lr=0.02, seed=3))
        best = max(h["val_f1"] for h in hist if h["val_f1"] is not None)
        rep = evaluate(net, val)
        assert rep.f1 == pytest.approx(best)


class TestClassify:
    def test_deterministic(self):
        net = build_network(NetworkConfig.desk(), seed=4)
        img = tiny_screen(True, 1)
        a, b = classify(net, img), classify(net, img)
        assert a.p_buggy == b.p_buggy and a.label == b.label

    def test_threshold_rule(self):
        net = build_network(NetworkConfig.desk(), seed=4)
        det = classify(net, tiny_screen(False, 2))
        assert det.label == ("buggy" if det.p_buggy >= 0.5 else "clean")
        assert 0.0 <= det.p_buggy <= 1.0


class TestMetrics:
    def test_reference_counts(self):
        p, r, f1 = precision_recall_f1(679, 798 - 679, 800 - 679)
        assert format_metric(p) == "0.851"
        assert format_metric(r) == "0.849"
        assert abs(f1 - 0.849) <= 0.001

    def test_perfect(self):
        p, r, f1 = precision_recall_f1(10, 0, 0)
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_degenerate_denominators_absent(self):
        p, r, f1 = precision_recall_f1(0, 0, 5)
        assert p is None and r == 0.0 and f1 is None
        p, r, f1 = precision_recall_f1(0, 0, 0)
        assert p is None and r is None and f1 is None

    def test_format_metric(self):
        assert format_metric(None) == "-"
        assert format_metric(0.8485) == "0.849"
        assert format_metric(1.0) == "1.000"
        assert format_metric(0.84981) == "0.850"


class TestEvaluate:
    def _stub(self, verdicts):
        seq = iter(verdicts)

        def classify_fn(net, img):
            from owleye.owlnet import Detection
            v = next(seq)
            return Detection(label=v, p_buggy=1.0 if v == "buggy" else 0.0)

        return classify_fn

    def test_confusion_counts(self):
        rows = [
            {"image": tiny_screen(True, 0), "label": "buggy", "source_id": "a_s0",
             "category": "null_value"},
            {"image": tiny_screen(True, 1), "label": "buggy", "source_id": "b_s0",
             "category": "missing_image"},
            {"image": tiny_screen(False, 2), "label": "clean", "source_id": "c_s0",
             "category": None},
            {"image": tiny_screen(False, 3), "label": "clean", "source_id": "d_s0",
             "category": None},
        ]
        rep = evaluate(None, rows, classify_fn=self._stub(
            ["buggy", "clean", "buggy", "clean"]))
        assert (rep.tp, rep.fn, rep.fp, rep.tn) == (1, 1, 1, 1)
        assert rep.per_category["null_value"].recall == 1.0
        assert rep.per_category["missing_image"].recall == 0.0

    def test_all_clean_predictor(self):
        rows = rows_for(0, 2)
        rep = evaluate(None, rows, classify_fn=self._stub(["clean"] * len(rows)))
        assert rep.recall == 0.0
        assert rep.precision is None

    def test_permutation_invariant(self):
        rows = rows_for(0, 3)
        verdicts = ["buggy" if r["label"] == "buggy" else "clean" for r in rows]
        rep1 = evaluate(None, rows, classify_fn=self._stub(verdicts))
        perm = list(reversed(rows))
        rep2 = evaluate(None, perm, classify_fn=self._stub(list(reversed(verdicts))))
        assert (rep1.tp, rep1.fp, rep1.fn, rep1.tn) == (rep2.tp, rep2.fp, rep2.fn, rep2.tn)
        assert rep1.f1 == rep2.f1


class TestCheckpoint:
    def test_round_trip_bit_identical(self, tmp_path):
        net = build_network(NetworkConfig.desk(), seed=6)
        net.channel_mean = np.array([0.5, 0.45, 0.4])
        net.channel_std = np.array([0.25, 0.25, 0.3])
        path = str(tmp_path / "net.owlnet")
        save_checkpoint(net, path, epoch=3, metrics={"val_f1": 0.75})
        net2, meta = load_checkpoint(path)
        assert meta["epoch"] == 3
        assert meta["metrics"]["val_f1"] == 0.75
        for k, v in net.state().items():
            assert (v == net2.state()[k]).all(), k
        rng = np.random.default_rng(8)
        for _ in range(10):
            img = RasterImage(rng.integers(0, 256, (64, 48, 3)).astype(np.uint8))
            assert classify(net, img) == classify(net2, img)

    def test_magic_enforced(self, tmp_path):
        p = tmp_path / "bad.owlnet"
        p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(str(p))

    def test_truncated_file(self, tmp_path):
        net = build_network(NetworkConfig.desk(), seed=0)
        path = tmp_path / "t.owlnet"
        save_checkpoint(net, str(path))
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(CheckpointError):
            load_checkpoint(str(path))

    def test_file_starts_with_magic(self, tmp_path):
        net = build_network(NetworkConfig.desk(), seed=0)
        path = tmp_path / "m.owlnet"
        save_checkpoint(net, str(path))
        assert path.read_bytes()[:8] == b"OWLNET01"


class TestSplitDiscipline:
    def test_disjoint_ok(self):
        check_split_disjoint(rows_for(0, 2), rows_for(10, 12))

    def test_shared_app_rejected(self):
        with pytest.raises(ManifestError) as exc:
            check_split_disjoint(rows_for(0, 3), rows_for(2, 4))
        assert "app002" in str(exc.value)


class TestLoadDataset:
    def test_shapes_and_labels(self):
        x, y = load_dataset(rows_for(0, 2), NetworkConfig.desk())
        assert x.shape == (4, 3, 192, 128)
        assert y.tolist() == [0, 1, 0, 1]

    def test_unknown_label_rejected(self):
        rows = [{"image": tiny_screen(False, 0), "label": "odd", "source_id": "x_s0"}]
        with pytest.raises(ManifestError):
            load_dataset(rows, NetworkConfig.desk())
