import numpy as np
import pytest

from oracles import check_gradients, check_sampled_parameters, parameter_count
from segdesicnet.autodiff import ops
from segdesicnet.autodiff.tensor import Tensor, backward
from segdesicnet.errors import ConfigError, ShapeError
from segdesicnet.model import (
    ModelConfig,
    build_model,
    forward,
    forward_decoder,
    forward_encoder,
    forward_segdesic,
    total_loss,
)

SMALL = ModelConfig(in_channels=3, num_classes=4, encoder_channels=(4, 6), segdesic_hidden=(8, 8, 6, 6, 5), encoding_dim=8)


def images(rng, n=2, size=8):
    return Tensor(rng.normal(size=(n, 3, size, size)))


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.abs(v).sum(axis=1, keepdims=True)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


class TestBuild:
    def test_same_seed_bit_identical(self):
        a, b = build_model(ModelConfig(), 5).state(), build_model(ModelConfig(), 5).state()
        assert list(a) == list(b)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)

    def test_different_seed_differs(self):
        a, b = build_model(SMALL, 1).state(), build_model(SMALL, 2).state()
        assert a["enc0.conv.weight"].tobytes() != b["enc0.conv.weight"].tobytes()

    @pytest.mark.parametrize("cfg", [ModelConfig(), SMALL])
    def test_parameter_count(self, cfg):
        assert build_model(cfg, 0).num_parameters() == parameter_count(cfg)

    def test_default_parameter_count_frozen(self):
        # value produced by the shape-walking oracle for the default widths
        assert parameter_count(ModelConfig()) == 269_782

    def test_six_linear_layers(self):
        store = build_model(ModelConfig(), 0)
        fc = [n for n, _ in store.named_parameters() if n.startswith("segdesic") and n.endswith("fc.weight")]
        bn = [n for n, _ in store.named_parameters() if n.startswith("segdesic") and n.endswith("bn.gamma")]
        assert len(fc) == 6 and len(bn) == 5

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            ModelConfig(encoding_dim=60).check_grid(16)
        ModelConfig(encoding_dim=64).check_grid(16)

    @pytest.mark.parametrize(
        "kwargs", [dict(encoder_channels=()), dict(segdesic_hidden=(8, 8)), dict(encoding_dim=6), dict(num_classes=1)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ModelConfig(**kwargs)


class TestForward:
    def test_bottleneck_shape(self):
        store = build_model(ModelConfig(), 0)
        z, skips = forward_encoder(store, Tensor(np.zeros((1, 3, 256, 256))))
        assert z.shape == (1, 64, 16, 16)
        assert [s.shape[2] for s in skips] == [128, 64, 32]

    def test_indivisible_input(self, rng):
        with pytest.raises(ShapeError):
            forward_encoder(build_model(SMALL, 0), images(rng, size=6))

    def test_zero_image_zero_bottleneck(self):
        z, _ = forward_encoder(build_model(SMALL, 0), Tensor(np.zeros((1, 3, 8, 8))), training=False)
        assert np.array_equal(z.data, np.zeros_like(z.data))

    def test_segmentation_probabilities(self, rng):
        store = build_model(SMALL, 0)
        z, skips = forward_encoder(store, images(rng))
        p = forward_decoder(store, z, skips)
        assert p.shape == (2, 4, 8, 8)
        assert np.allclose(p.data.sum(axis=1), 1.0, atol=1e-9, rtol=0)

    def test_head_output_is_unit_l1(self, rng):
        store = build_model(SMALL, 0)
        z, _ = forward_encoder(store, images(rng))
        c = forward_segdesic(store, z)
        assert c.shape == (2, 8) and np.all(np.isfinite(c.data))
        assert np.allclose(np.abs(c.data).sum(axis=1), 1.0, atol=1e-9, rtol=0)

    def test_eval_deterministic(self, rng):
        store = build_model(SMALL, 0)
        x, t = images(rng), images(rng)
        a, b = forward(store, x, t), forward(store, x, t)
        assert a.seg_probs.data.tobytes() == b.seg_probs.data.tobytes()
        assert a.c_hat_target.data.tobytes() == b.c_hat_target.data.tobytes()

    @pytest.mark.parametrize("training", [False, True])
    def test_target_never_reaches_segmentation(self, rng, training):
        x, t = images(rng), images(rng)

        def model():
            # nonzero biases keep the head output of an all-zero target batch normalizable
            store = build_model(SMALL, 0)
            r = np.random.default_rng(0)
            for name, p in store.named_parameters():
                if name.endswith("bias") or name.endswith("beta"):
                    p.data[...] = r.normal(scale=0.1, size=p.shape)
            return store

        a = forward(model(), x, t, training=training).seg_probs.data
        b = forward(model(), x, Tensor(np.zeros_like(t.data)), training=training).seg_probs.data
        assert a.tobytes() == b.tobytes()


class TestLoss:
    def test_hand_case(self):
        # one pixel with p = exp(-0.5) gives L_seg = 0.5; cosines 0.8 and 0.6 give d = 0.2 and 0.4
        q = np.exp(-0.5)
        probs = Tensor(np.array([q, 1 - q]).reshape(1, 2, 1, 1))
        c = np.array([[1.0, 0.0]])
        terms = total_loss(probs, np.zeros((1, 1, 1), dtype=int), Tensor([[0.8, 0.6]]), c, Tensor([[0.6, 0.8]]), c, 0.5)
        assert terms.seg.item() == pytest.approx(0.5, abs=1e-12)
        assert terms.uda_source.item() == pytest.approx(0.2, abs=1e-12)
        assert terms.uda_target.item() == pytest.approx(0.4, abs=1e-12)
        assert terms.total.item() == pytest.approx(0.8, abs=1e-12)

    def test_alpha_zero_is_cross_entropy(self, rng):
        store = build_model(SMALL, 0)
        out = forward(store, images(rng), images(rng))
        labels = rng.integers(0, 4, size=(2, 8, 8))
        c_s, c_t = unit_rows(rng, 2, 8), unit_rows(rng, 2, 8)
        terms = total_loss(out.seg_probs, labels, out.c_hat_source, c_s, out.c_hat_target, c_t, 0.0)
        assert terms.total.item() == ops.cross_entropy(out.seg_probs, labels).item()

    def test_perfect_encodings_leave_only_segmentation(self, rng):
        probs = ops.softmax(Tensor(rng.normal(size=(2, 3, 4, 4))))
        labels = rng.integers(0, 3, size=(2, 4, 4))
        c = unit_rows(rng, 2, 8)
        terms = total_loss(probs, labels, Tensor(c), c, Tensor(c), c, 0.5)
        assert terms.total.item() == pytest.approx(terms.seg.item(), abs=1e-12)

    def test_combination(self, rng):
        probs = ops.softmax(Tensor(rng.normal(size=(2, 3, 4, 4))))
        labels = rng.integers(0, 3, size=(2, 4, 4))
        cs, ct, hs, ht = (unit_rows(rng, 2, 8) for _ in range(4))
        terms = total_loss(probs, labels, Tensor(hs), cs, Tensor(ht), ct, 0.7)

        def d(a, b):
            return 1 - (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))

        want = terms.seg.item() + 0.7 * (d(cs, hs).mean() + d(ct, ht).mean())
        assert terms.total.item() == pytest.approx(want, abs=1e-12)

    def test_negative_alpha(self, rng):
        probs = ops.softmax(Tensor(rng.normal(size=(1, 2, 2, 2))))
        c = unit_rows(rng, 1, 4)
        with pytest.raises(ConfigError):
            total_loss(probs, np.zeros((1, 2, 2), dtype=int), Tensor(c), c, Tensor(c), c, -0.1)

    def test_scale_invariance(self, rng):
        probs = ops.softmax(Tensor(rng.normal(size=(2, 3, 4, 4))))
        labels = rng.integers(0, 3, size=(2, 4, 4))
        cs, ct, hs, ht = (unit_rows(rng, 2, 8) for _ in range(4))
        base = total_loss(probs, labels, Tensor(hs), cs, Tensor(ht), ct, 0.5).total.item()
        scaled = total_loss(probs, labels, Tensor(hs * 37.0), cs, Tensor(ht * 0.02), ct, 0.5).total.item()
        assert abs(base - scaled) < 1e-10

    def test_alpha_zero_gradients(self, rng):
        x, t = images(rng), images(rng)
        labels = rng.integers(0, 4, size=(2, 8, 8))
        c_s, c_t = unit_rows(rng, 2, 8), unit_rows(rng, 2, 8)

        def grads(use_total):
            store = build_model(SMALL, 3)
            store.zero_grad()
            out = forward(store, x, t, training=True)
            if use_total:
                loss = total_loss(out.seg_probs, labels, out.c_hat_source, c_s, out.c_hat_target, c_t, 0.0).total
            else:
                loss = ops.cross_entropy(out.seg_probs, labels)
            backward(loss)
            return {n: p.grad.copy() for n, p in store.named_parameters()}

        a, b = grads(True), grads(False)
        for name in a:
            assert a[name].tobytes() == b[name].tobytes(), name
            if name.startswith("segdesic"):
                assert not a[name].any(), name


class TestModelGradients:
    def test_encoder_decoder(self, rng):
        store = build_model(SMALL, 4)
        x = Tensor(rng.normal(size=(1, 3, 16, 16)), requires_grad=True)
        labels = rng.integers(0, 4, size=(1, 16, 16))

        def loss():
            z, skips = forward_encoder(store, x, training=False)
            return ops.cross_entropy(forward_decoder(store, z, skips, training=False), labels)

        assert check_gradients(loss, [x], rng, samples_per_tensor=10) < 1e-4
        assert check_sampled_parameters(loss, store, rng, count=25) < 1e-4

    def test_segdesic_head(self, rng):
        store = build_model(SMALL, 4)
        z = Tensor(rng.normal(size=(3, 6, 2, 2)), requires_grad=True)
        c = unit_rows(rng, 3, 8)

        def loss():
            return ops.mean(ops.cosine_dissimilarity(c, forward_segdesic(store, z, training=True)))

        assert check_gradients(loss, [z], rng, samples_per_tensor=10) < 1e-4
        assert check_sampled_parameters(loss, store, rng, count=25) < 1e-4
