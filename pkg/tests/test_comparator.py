import math

import numpy as np
import pytest

from prnu_forge.comparator import (AdamState, ComparatorModel, TrainConfig,
                                   TrainSample, TrainingData,
                                   TrainingDivergence, adam_step, backward,
                                   bce_pair_loss, forward, sample_batch, train)


def finite_difference_check(model, planes, labels, eps=1e-5):
    """Exhaustive central-difference comparison; returns (max_rel, abs_fails)."""
    _, grads, _ = backward(model, planes, labels)
    max_rel = 0.0
    abs_fails = 0
    for pi, p in enumerate(model.params()):
        flat = p.ravel()
        gflat = grads[pi].ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            lp, _, _ = backward(model, planes, labels)
            flat[k] = orig - eps
            lm, _, _ = backward(model, planes, labels)
            flat[k] = orig
            num = (lp - lm) / (2 * eps)
            ana = gflat[k]
            if abs(ana) < 1e-12:
                if abs(num - ana) > 1e-10:
                    abs_fails += 1
            else:
                max_rel = max(max_rel, abs(num - ana) / max(abs(num), abs(ana)))
    return max_rel, abs_fails


class TestForward:
    def test_zeroed_head_gives_half(self):
        model = ComparatorModel.initialize(channels=(4, 8), seed=0)
        model.head_w[:] = 0.0
        model.head_b[...] = 0.0
        plane = np.random.default_rng(0).normal(size=(32, 32))
        assert forward(model, plane) == 0.5

    def test_deterministic(self):
        model = ComparatorModel.initialize(channels=(4, 8), seed=1)
        plane = np.random.default_rng(1).normal(size=(24, 24))
        assert forward(model, plane) == forward(model, plane)

    def test_head_bias_closed_form(self):
        model = ComparatorModel.initialize(channels=(4,), seed=2)
        model.head_w[:] = 0.0
        model.head_b[...] = 10.0
        plane = np.random.default_rng(2).normal(size=(20, 20))
        assert forward(model, plane) == pytest.approx(1 / (1 + math.exp(-10)),
                                                      abs=1e-12)

    def test_open_interval_and_batch_independence(self):
        model = ComparatorModel.initialize(channels=(4, 8), seed=3)
        rng = np.random.default_rng(3)
        planes = rng.normal(size=(5, 24, 24))
        batch_probs = forward(model, planes)
        assert np.all((batch_probs > 0) & (batch_probs < 1))
        for i in range(5):
            assert forward(model, planes[i]) == batch_probs[i]

    def test_undersized_input_rejected(self):
        model = ComparatorModel.initialize(channels=(4,), seed=4)
        with pytest.raises(ValueError):
            forward(model, np.zeros((8, 8)))


class TestBcePairLoss:
    def test_half_half_is_two_ln_two(self):
        assert bce_pair_loss(0.5, 0.5) == pytest.approx(2 * math.log(2), abs=1e-9)

    def test_perfect_prediction_goes_to_zero(self):
        values = [bce_pair_loss(p, 1 - p) for p in (0.6, 0.9, 0.99, 0.999999)]
        assert all(a > b for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-5

    def test_hand_case(self):
        assert bce_pair_loss(0.8, 0.3) == pytest.approx(
            -math.log(0.8) - math.log(0.7), abs=1e-9
        )

    def test_clamped_at_extremes(self):
        assert math.isfinite(bce_pair_loss(1.0, 0.0))
        assert math.isfinite(bce_pair_loss(0.0, 1.0))


class TestBackward:
    def test_zero_learning_signal_zeroes_gradients(self):
        # with zeroed head, p == 0.5; labels of 0.5 put BCE at a stationary point
        model = ComparatorModel.initialize(channels=(4,), seed=5)
        model.head_w[:] = 0.0
        model.head_b[...] = 0.0
        planes = np.random.default_rng(5).normal(size=(4, 16, 16))
        _, grads, probs = backward(model, planes, np.full(4, 0.5))
        assert np.all(probs == 0.5)
        for g in grads:
            np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_head_bias_gradient_is_mean_error(self):
        model = ComparatorModel.initialize(channels=(4, 8), seed=6)
        planes = np.random.default_rng(6).normal(size=(6, 24, 24))
        labels = np.array([1, 0, 1, 0, 1, 1], dtype=float)
        _, grads, probs = backward(model, planes, labels)
        assert float(grads[-1]) == pytest.approx(float(np.mean(probs - labels)),
                                                 abs=1e-9)

    def test_gradients_match_finite_differences_small_models(self):
        cases = [((2,), 7, (2, 16, 16)), ((2, 3), 8, (2, 16, 16))]
        for channels, seed, shape in cases:
            model = ComparatorModel.initialize(channels=channels, seed=1)
            rng = np.random.default_rng(seed)
            planes = rng.normal(size=shape)
            labels = (np.arange(shape[0]) % 2).astype(float)
            max_rel, abs_fails = finite_difference_check(model, planes, labels)
            assert max_rel < 1e-6, (channels, max_rel)
            assert abs_fails == 0

    def test_label_count_mismatch(self):
        model = ComparatorModel.initialize(channels=(2,), seed=0)
        with pytest.raises(ValueError):
            backward(model, np.zeros((2, 16, 16)), np.zeros(3))


class TestAdam:
    def test_zero_gradient_is_noop(self):
        params = [np.array([1.0, -2.0]), np.array(0.5)]
        before = [p.copy() for p in params]
        state = AdamState.for_params(params)
        adam_step(params, [np.zeros(2), np.array(0.0)], state, 1e-3)
        for p, b in zip(params, before):
            np.testing.assert_array_equal(p, b)

    def test_first_step_hand_value(self):
        params = [np.array(1.0)]
        state = AdamState.for_params(params)
        adam_step(params, [np.array(1.0)], state, 1e-3)
        expected_delta = -1e-3 / (1.0 + 1e-8)
        assert float(params[0]) - 1.0 == pytest.approx(expected_delta, abs=1e-15)

    def test_nan_gradient_aborts(self):
        params = [np.array([1.0])]
        state = AdamState.for_params(params)
        with pytest.raises(TrainingDivergence):
            adam_step(params, [np.array([float("nan")])], state, 1e-3)

    def test_deterministic_trajectory(self):
        def run():
            rng = np.random.default_rng(9)
            params = [rng.normal(size=(3, 3)), rng.normal(size=3)]
            state = AdamState.for_params(params)
            for _ in range(25):
                grads = [rng.normal(size=(3, 3)), rng.normal(size=3)]
                adam_step(params, grads, state, 1e-2)
            return params

        a, b = run(), run()
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa, pb)


def _toy_training_data(rng, n_devices=8, n_images=6, side=24, n_levels=1,
                       signal=0.6, noise=1.0):
    """Separable toy set: positives share the device field, negatives don't."""
    fingerprints = {}
    residuals = {}
    for d in range(n_devices):
        dev = f"dev{d}"
        base = rng.normal(0.0, 1.0, (side, side)).astype(np.float32)
        fingerprints[dev] = [base for _ in range(n_levels)]
        pool = []
        for i in range(n_images):
            plane = (signal * base
                     + noise * rng.normal(0.0, 1.0, (side, side))).astype(np.float32)
            pool.append((f"img{i}", [plane for _ in range(n_levels)]))
        residuals[dev] = pool
    return TrainingData(fingerprints=fingerprints, residuals=residuals)


class TestSampling:
    def test_two_devices_negative_is_other(self):
        rng = np.random.default_rng(10)
        data = _toy_training_data(rng, n_devices=2, n_images=3)
        batch = sample_batch(data, np.random.default_rng(0), 64)
        for s in batch:
            assert s.negative_device_id != s.device_id
            assert {s.device_id, s.negative_device_id} == {"dev0", "dev1"}

    def test_device_frequencies_uniform(self):
        rng = np.random.default_rng(11)
        data = _toy_training_data(rng, n_devices=10, n_images=2, side=24)
        batch = sample_batch(data, np.random.default_rng(1), 10_000)
        counts = {}
        for s in batch:
            counts[s.device_id] = counts.get(s.device_id, 0) + 1
        for dev in data.devices:
            assert counts.get(dev, 0) / 10_000 == pytest.approx(0.1, abs=0.02)

    def test_constraint_enforced_by_construction(self):
        with pytest.raises(ValueError):
            TrainSample("a", "p", "a", "n")

    def test_single_device_rejected(self):
        rng = np.random.default_rng(12)
        data = _toy_training_data(rng, n_devices=2, n_images=2)
        data.devices = ["dev0"]
        with pytest.raises(ValueError):
            sample_batch(data, np.random.default_rng(2), 4)


class TestTrain:
    def test_zero_learning_rate_freezes_parameters(self):
        rng = np.random.default_rng(13)
        data = _toy_training_data(rng, n_devices=3, n_images=2)
        cfg = TrainConfig(epochs=2, learning_rate=0.0, seed=4, channels=(2, 4),
                          crop_size=16)
        model, trace = train(data, cfg)
        fresh = ComparatorModel.initialize(channels=(2, 4), seed=4)
        for a, b in zip(model.params(), fresh.params()):
            np.testing.assert_array_equal(a, b)
        losses = {loss for _, _, loss in trace}
        assert len(trace) == 2 * max(1, math.ceil(data.n_images / cfg.batch_size))

    def test_learning_curve_decreases_on_separable_set(self):
        rng = np.random.default_rng(14)
        data = _toy_training_data(rng, n_devices=8, n_images=6)
        cfg = TrainConfig(epochs=5, seed=0, channels=(4, 8), crop_size=16,
                          steps_per_epoch=12)
        model, trace = train(data, cfg)
        losses = [loss for _, _, loss in trace]
        per_epoch = [float(np.mean(losses[i * 12:(i + 1) * 12])) for i in range(5)]
        moving = [float(np.mean(per_epoch[i:i + 3])) for i in range(3)]
        assert moving[0] > moving[1] > moving[2]
        assert per_epoch[-1] <= per_epoch[0]

    def test_reproducible_trace_and_parameters(self):
        rng = np.random.default_rng(15)
        data = _toy_training_data(rng, n_devices=4, n_images=3)
        cfg = TrainConfig(epochs=2, seed=7, channels=(2, 4), crop_size=16)
        model_a, trace_a = train(data, cfg)
        model_b, trace_b = train(data, cfg)
        assert trace_a == trace_b
        for pa, pb in zip(model_a.params(), model_b.params()):
            np.testing.assert_array_equal(pa, pb)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=-0.1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(crop_size=8)
