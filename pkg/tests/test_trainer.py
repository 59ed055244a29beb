import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import central_difference, rel_err
from voxplan.dataio import PhantomSpec, phantom_corpus
from voxplan.graph import UNetSpec, build_unet
from voxplan.trainer import (
    METRICS_HEADER,
    TrainConfig,
    accuracy,
    adam_update,
    bce_grad,
    bce_loss,
    confusion_voxels,
    dice_coefficient,
    loss_and_grad,
    metrics_csv,
    sgd_update,
    soft_dice_grad,
    soft_dice_loss,
    train,
)


class TestSoftDice:
    def test_perfect_match(self):
        t = np.zeros(1000)
        t[:100] = 1
        assert soft_dice_loss(t, t) == 0.0

    def test_all_zero_prediction(self):
        t = np.zeros(50)
        t[:10] = 1
        assert soft_dice_loss(np.zeros(50), t) == pytest.approx(1 - 1 / 11)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            soft_dice_loss(np.zeros(3), np.zeros(4))

    @pytest.mark.parametrize("i", range(20))
    def test_gradient(self, i):
        rng = np.random.default_rng(i)
        p = rng.uniform(0, 1, size=(2, 1, 3, 3, 3))
        t = (rng.uniform(size=p.shape) > 0.6).astype(float)
        u = rng.standard_normal(p.shape)
        fd = central_difference(lambda v: soft_dice_loss(v, t), p, u)
        assert rel_err(fd, np.vdot(soft_dice_grad(p, t), u)) < 1e-6

    @given(arrays(np.float64, 20, elements=st.floats(0, 1)), arrays(np.bool_, 20))
    def test_range(self, p, t):
        assert 0 <= soft_dice_loss(p, t.astype(float)) < 1


class TestBCE:
    def test_half_is_ln2(self):
        assert bce_loss(np.full(10, 0.5), np.ones(10)) == pytest.approx(math.log(2))

    def test_exact_match_is_epsilon_limited(self):
        t = np.array([0.0, 1.0, 1.0, 0.0])
        assert 0 < bce_loss(t, t) < 1e-6

    @pytest.mark.parametrize("i", range(20))
    def test_gradient(self, i):
        rng = np.random.default_rng(100 + i)
        p = rng.uniform(0.05, 0.95, size=(1, 1, 3, 4, 2))
        t = (rng.uniform(size=p.shape) > 0.5).astype(float)
        u = rng.standard_normal(p.shape)
        fd = central_difference(lambda v: bce_loss(v, t), p, u)
        assert rel_err(fd, np.vdot(bce_grad(p, t), u)) < 1e-5

    def test_combined_is_sum(self):
        rng = np.random.default_rng(3)
        p, t = rng.uniform(0.1, 0.9, 30), (rng.uniform(size=30) > 0.5).astype(float)
        loss, g = loss_and_grad("bce_plus_dice", p, t)
        assert loss == pytest.approx(bce_loss(p, t) + soft_dice_loss(p, t))
        np.testing.assert_allclose(g, bce_grad(p, t) + soft_dice_grad(p, t))


masks = st.integers(1, 60).flatmap(lambda n: st.tuples(arrays(np.bool_, n), arrays(np.bool_, n)))


class TestMetrics:
    def test_examples(self):
        a = np.zeros(16, bool)
        a[:8] = True
        b = np.zeros(16, bool)
        b[4:12] = True
        assert dice_coefficient(a, b) == 0.5
        assert dice_coefficient(a, a) == 1.0
        assert dice_coefficient(a, ~a) == 0.0
        assert accuracy(a, ~a) == 0.0 and accuracy(a, a) == 1.0
        assert dice_coefficient(np.zeros(5), np.zeros(5)) == 1.0

    def test_non_binary_rejected(self):
        with pytest.raises(ValueError, match="binary"):
            dice_coefficient(np.array([0.5, 1.0]), np.array([0.0, 1.0]))

    @given(masks)
    @settings(max_examples=200)
    def test_properties(self, ab):
        a, b = ab
        c = confusion_voxels(a, b)
        assert c.tp + c.fp + c.fn + c.tn == a.size
        d = dice_coefficient(a, b)
        assert d == dice_coefficient(b, a)
        assert 0 <= d <= 1
        assert 0 <= accuracy(a, b) <= 1
        assert accuracy(a, b) + (c.fp + c.fn) / a.size == pytest.approx(1.0)
        if a.any():
            assert dice_coefficient(a, a) == 1.0


class TestOptimizers:
    def test_zero_grad(self):
        p = np.array([1.0, -2.0])
        sgd_update(p, np.zeros(2), 0.5)
        adam_update(p, np.zeros(2), np.zeros(2), np.zeros(2), 1, 0.5)
        np.testing.assert_array_equal(p, [1.0, -2.0])

    def test_sgd_unit_lr(self):
        p = np.array([1.0, 2.0])
        sgd_update(p, np.array([0.25, -1.0]), 1.0)
        np.testing.assert_array_equal(p, [0.75, 3.0])

    def test_momentum_accumulates(self):
        p, v = np.zeros(1), np.zeros(1)
        for _ in range(2):
            sgd_update(p, np.ones(1), 1.0, velocity=v, momentum=0.5)
        assert p[0] == -(1 + 1.5)

    def test_adam_first_step_is_sign(self):
        g = np.array([3.0, -0.02, 1e-3])
        p = np.zeros(3)
        adam_update(p, g, np.zeros(3), np.zeros(3), 1, 1e-3)
        # At t=1, m_hat = g and v_hat = g^2, so the step is -lr * g / (|g| + eps).
        np.testing.assert_allclose(p, -1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(p, -1e-3 * np.sign(g), rtol=1e-4)


def small_run(config, n_train=4, n_test=2):
    spec = UNetSpec(depth=1, base_filters=2, input_dims=(8, 8, 8), batch=config.batch)
    data = phantom_corpus(PhantomSpec(dims=(8, 8, 8), radius=(1, 3), seed=11), n_train + n_test)
    return train(build_unet(spec), data[:n_train], data[n_train:], config)


class TestTrainLoop:
    def test_record_count_and_ranges(self):
        records, _ = small_run(TrainConfig(epochs=3, batch=2))
        assert [r.epoch for r in records] == [0, 1, 2]
        for r in records:
            for v in (r.train_dice, r.test_dice, r.train_acc, r.test_acc):
                assert 0 <= v <= 1
            assert r.step_seconds_mean > 0

    def test_zero_lr_flat(self):
        records, _ = small_run(TrainConfig(epochs=3, batch=2, learning_rate=0.0))
        first = records[0]
        for r in records[1:]:
            assert (r.test_dice, r.test_acc) == (first.test_dice, first.test_acc)
            # Shuffling changes batch composition but not the per-volume set.
            assert r.train_dice == pytest.approx(first.train_dice, abs=1e-12)

    def test_zero_lr_flat_loss_at_batch_one(self):
        # Soft dice is pooled over the batch, so the mean loss is only
        # shuffle-invariant when every batch holds a single volume.
        records, _ = small_run(TrainConfig(epochs=3, batch=1, learning_rate=0.0))
        for r in records[1:]:
            assert r.train_loss == pytest.approx(records[0].train_loss, rel=1e-12)

    def test_deterministic(self):
        cfg = TrainConfig(epochs=2, batch=2, seed=4)
        (a, pa), (b, pb) = small_run(cfg), small_run(cfg)
        assert metrics_csv(a, include_timing=False) == metrics_csv(b, include_timing=False)
        assert all(pa[k][0].tobytes() == pb[k][0].tobytes() for k in pa)

    def test_csv_format(self):
        records, _ = small_run(TrainConfig(epochs=1, batch=2))
        lines = metrics_csv(records).splitlines()
        assert lines[0] == ",".join(METRICS_HEADER)
        assert len(lines) == 2 and len(lines[1].split(",")) == len(METRICS_HEADER)

    def test_bad_config(self):
        for kwargs in ({"epochs": 0}, {"batch": 0}, {"threshold": 1.0}, {"optimizer": "rmsprop"}, {"loss": "l2"}):
            with pytest.raises(ValueError):
                TrainConfig(**kwargs)

    def test_batch_mismatch(self):
        spec = UNetSpec(depth=1, base_filters=2, input_dims=(8, 8, 8), batch=1)
        data = phantom_corpus(PhantomSpec(dims=(8, 8, 8), radius=(1, 3)), 2)
        with pytest.raises(ValueError, match="batch"):
            train(build_unet(spec), data, [], TrainConfig(batch=2))
