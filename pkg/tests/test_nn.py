import numpy as np
import pytest

from fairset.errors import (
    ConfigError,
    DegenerateBatchError,
    ModeError,
    NumericError,
    ShapeError,
)
from fairset.idx import ImageSet
from fairset.nn import (
    CnnModel,
    TrainConfig,
    extract_features,
    load_model,
    save_model,
    softmax_cross_entropy,
    train,
)
from fairset.nn.layers import BatchNorm2d, Conv2d, Dropout, MaxPool2d


def conv2d_reference(x, w, b):
    """Direct six-nested-loop cross-correlation with zero padding."""
    n, cin, h, wd = x.shape
    f = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, f, h, wd), dtype=x.dtype)
    for ni in range(n):
        for fi in range(f):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for c in range(cin):
                        for ki in range(3):
                            for kj in range(3):
                                acc += w[fi, c, ki, kj] * xp[ni, c, i + ki, j + kj]
                    out[ni, fi, i, j] = acc + b[fi]
    return out


class TestConv:
    def test_zero_kernel_outputs_bias(self, rng):
        layer = Conv2d(1, 1, rng, dtype=np.float64)
        layer.params["w"][:] = 0.0
        layer.params["b"][:] = 2.5
        out = layer.forward(rng.standard_normal((1, 1, 4, 4)), False)
        assert np.allclose(out, 2.5)

    def test_constant_image_all_ones_kernel(self, rng):
        layer = Conv2d(1, 1, rng, dtype=np.float64)
        layer.params["w"][:] = 1.0
        layer.params["b"][:] = 0.0
        c = 3.0
        out = layer.forward(np.full((1, 1, 5, 5), c), False)[0, 0]
        assert out[2, 2] == pytest.approx(9 * c)
        for corner in [(0, 0), (0, 4), (4, 0), (4, 4)]:
            assert out[corner] == pytest.approx(4 * c)

    def test_matches_naive_loop_reference(self, rng):
        layer = Conv2d(2, 3, rng, dtype=np.float64)
        x = rng.standard_normal((1, 2, 5, 5))
        want = conv2d_reference(x, layer.params["w"], layer.params["b"])
        got = layer.forward(x, False)
        assert np.abs(got - want).max() < 1e-6

    def test_channel_mismatch(self, rng):
        layer = Conv2d(2, 3, rng)
        with pytest.raises(ShapeError):
            layer.forward(np.zeros((1, 4, 5, 5), dtype=np.float32), False)


class TestBatchNorm:
    def test_constant_channel_maps_to_beta(self):
        layer = BatchNorm2d(2, dtype=np.float64)
        layer.params["beta"][:] = (0.7, -1.2)
        out = layer.forward(np.full((4, 2, 3, 3), 5.0), True)
        assert np.allclose(out[:, 0], 0.7)
        assert np.allclose(out[:, 1], -1.2)

    def test_standardized_input_passes_through(self, rng):
        layer = BatchNorm2d(3, dtype=np.float64)
        x = rng.standard_normal((8, 3, 6, 6))
        x -= x.mean(axis=(0, 2, 3), keepdims=True)
        x /= x.std(axis=(0, 2, 3), keepdims=True)
        out = layer.forward(x, True)
        assert np.abs(out - x).max() < 1e-3

    def test_train_output_standardized(self, rng):
        layer = BatchNorm2d(4, dtype=np.float64)
        out = layer.forward(rng.standard_normal((6, 4, 5, 5)) * 3 + 1, True)
        mean = out.mean(axis=(0, 2, 3))
        var = out.var(axis=(0, 2, 3))
        assert np.abs(mean).max() < 1e-5
        assert np.abs(var - 1).max() < 1e-3

    def test_batch_of_one_rejected_in_train_mode(self, rng):
        layer = BatchNorm2d(2)
        with pytest.raises(DegenerateBatchError):
            layer.forward(rng.standard_normal((1, 2, 4, 4)).astype(np.float32), True)

    def test_infer_depends_only_on_running_stats(self, rng):
        layer = BatchNorm2d(2, dtype=np.float64)
        layer.forward(rng.standard_normal((8, 2, 4, 4)), True)
        a = rng.standard_normal((1, 2, 4, 4))
        b = rng.standard_normal((1, 2, 4, 4))
        c = rng.standard_normal((1, 2, 4, 4))
        out_ab = layer.forward(np.concatenate([a, b]), False)
        out_ac = layer.forward(np.concatenate([a, c]), False)
        assert np.array_equal(out_ab[0], out_ac[0])


class TestPoolDropout:
    def test_maxpool_2x2(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
        out = MaxPool2d().forward(x, False)
        assert out.shape == (1, 1, 1, 1)
        assert out[0, 0, 0, 0] == 4.0

    def test_maxpool_rejects_odd_dims(self, rng):
        with pytest.raises(ShapeError):
            MaxPool2d().forward(rng.standard_normal((1, 1, 5, 4)), False)

    def test_dropout_rate_zero_is_identity(self, rng):
        layer = Dropout(0.0, rng)
        x = rng.standard_normal((5, 5))
        assert np.array_equal(layer.forward(x, True), x)
        assert np.array_equal(layer.forward(x, False), x)

    def test_dropout_infer_is_identity(self, rng):
        layer = Dropout(0.5, rng)
        x = rng.standard_normal((5, 5))
        assert np.array_equal(layer.forward(x, False), x)

    def test_dropout_rate_out_of_range(self, rng):
        with pytest.raises(ConfigError):
            Dropout(1.0, rng)
        with pytest.raises(ConfigError):
            Dropout(-0.1, rng)

    def test_dropout_survivor_statistics(self, rng):
        layer = Dropout(0.25, rng)
        x = rng.uniform(1.0, 2.0, 10**6)
        out = layer.forward(x, True)
        survivors = out != 0
        assert survivors.mean() == pytest.approx(0.75, abs=0.003)
        # inverted scaling keeps the expected activation unchanged
        assert out.mean() == pytest.approx(x.mean(), rel=0.01)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits_loss_is_ln10(self):
        loss, _ = softmax_cross_entropy(np.zeros((4, 10)), np.array([0, 3, 5, 9]))
        assert loss == pytest.approx(np.log(10.0), abs=1e-9)

    def test_huge_correct_logit_no_overflow(self):
        logits = np.zeros((1, 10))
        logits[0, 7] = 1000.0
        loss, grad = softmax_cross_entropy(logits, np.array([7]))
        assert loss == pytest.approx(0.0, abs=1e-9)
        assert np.all(np.isfinite(grad))

    def test_nonfinite_logits_rejected(self):
        logits = np.zeros((1, 10))
        logits[0, 0] = np.nan
        with pytest.raises(NumericError):
            softmax_cross_entropy(logits, np.array([0]))


def tiny_image_set(rng, n=96):
    """Class k gets a distinctive bright k-dependent stripe; easy to overfit."""
    images = rng.integers(0, 40, (n, 28, 28), dtype=np.uint8)
    labels = np.arange(n, dtype=np.uint8) % 10
    for i in range(n):
        images[i, labels[i] * 2 : labels[i] * 2 + 3, :] = 250
    return ImageSet(images, labels)


class TestTraining:
    def test_learning_rate_zero_leaves_parameters_unchanged(self, rng):
        data = tiny_image_set(rng)
        model = CnnModel(seed=1)
        before = {
            (id(l), n): l.params[n].copy() for l, n in model.parameters()
        }
        train(model, data, TrainConfig(learning_rate=0.0, epochs=1, seed=2))
        for layer, name in model.parameters():
            assert np.array_equal(layer.params[name], before[(id(layer), name)])

    def test_same_seed_same_parameters(self, rng):
        data = tiny_image_set(rng)
        cfg = TrainConfig(epochs=1, seed=7)
        m1, m2 = CnnModel(seed=3), CnnModel(seed=3)
        train(m1, data, cfg)
        train(m2, data, cfg)
        for (l1, n1), (l2, n2) in zip(m1.parameters(), m2.parameters()):
            assert np.array_equal(l1.params[n1], l2.params[n2])

    def test_training_leaves_model_in_infer_mode(self, rng):
        model = CnnModel(seed=0)
        train(model, tiny_image_set(rng), TrainConfig(epochs=1))
        assert model.mode == "infer"

    def test_trace_has_one_entry_per_epoch(self, rng):
        model = CnnModel(seed=0)
        trace = train(model, tiny_image_set(rng), TrainConfig(epochs=2))
        assert [t["epoch"] for t in trace] == [0, 1]
        assert all(np.isfinite(t["loss"]) for t in trace)


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(5)
    model = CnnModel(seed=5)
    train(model, tiny_image_set(rng), TrainConfig(epochs=1, seed=5))
    return model


class TestFeatures:
    def test_duplicate_images_get_identical_rows(self, trained, rng):
        img = rng.integers(0, 256, (1, 28, 28), dtype=np.uint8)
        batch = np.concatenate([img, img, img])
        feats = extract_features(trained, batch)
        assert np.array_equal(feats[0], feats[1])
        assert np.array_equal(feats[0], feats[2])

    def test_empty_input_gives_0x128(self, trained):
        feats = extract_features(trained, np.zeros((0, 28, 28), dtype=np.uint8))
        assert feats.shape == (0, 128)

    def test_repeated_extraction_bit_identical(self, trained, rng):
        imgs = rng.integers(0, 256, (7, 28, 28), dtype=np.uint8)
        assert np.array_equal(extract_features(trained, imgs), extract_features(trained, imgs))

    def test_matches_manual_layer_replay(self, trained, rng):
        imgs = rng.integers(0, 256, (3, 28, 28), dtype=np.uint8)
        feats = extract_features(trained, imgs)
        x = (imgs.astype(np.float32) / 255.0).reshape(-1, 1, 28, 28)
        for layer in trained.layers[: trained.feature_index + 1]:
            x = layer.forward(x, False)
        assert np.abs(feats - x).max() < 1e-6

    def test_train_mode_rejected(self, rng):
        model = CnnModel(seed=0)
        assert model.mode == "train"
        with pytest.raises(ModeError):
            extract_features(model, np.zeros((1, 28, 28), dtype=np.uint8))

    def test_checkpoint_roundtrip_preserves_features(self, trained, tmp_path, rng):
        imgs = rng.integers(0, 256, (4, 28, 28), dtype=np.uint8)
        save_model(trained, tmp_path / "model.bin")
        again = load_model(tmp_path / "model.bin")
        assert np.array_equal(extract_features(trained, imgs), extract_features(again, imgs))
