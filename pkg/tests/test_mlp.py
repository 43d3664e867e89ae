import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wecslab import mlp
from wecslab.netio import TrainingDivergedError, load_network
from wecslab.refgen import build_training_set


def zero_net(sizes=(2, 5, 1)):
    net = mlp.MlpNetwork.initialise(sizes)
    net.set_params_flat(np.zeros_like(net.params_flat()))
    return net


class TestSigmoid:
    def test_centre(self):
        assert mlp.sigmoid(0.0) == 0.5

    def test_upper_asymptote(self):
        assert mlp.sigmoid(40.0) == 1.0

    def test_no_overflow(self):
        assert mlp.sigmoid(-1000.0) == 0.0

    @given(st.floats(-50, 50))
    def test_symmetry(self, x):
        assert mlp.sigmoid(-x) == pytest.approx(1 - mlp.sigmoid(x), abs=1e-15)


class TestForward:
    def test_zero_network(self):
        out, acts = mlp.forward(zero_net(), [0.3, 0.7])
        assert np.all(acts[1] == 0.5) and out[0] == 0.0

    def test_single_path_hand_trace(self):
        net = zero_net((1, 1, 1))
        net.weights[0][0, 0] = 1.0
        net.weights[1][0, 0] = 3.0
        out, acts = mlp.forward(net, [0.0])
        assert acts[1][0] == 0.5 and out[0] == 1.5

    def test_hidden_permutation_invariance(self):
        net = mlp.MlpNetwork.initialise(seed=4)
        perm = np.random.Generator(np.random.PCG64(1)).permutation(5)
        other = net.copy()
        other.weights[0] = net.weights[0][perm]
        other.thresholds[0] = net.thresholds[0][perm]
        other.weights[1] = net.weights[1][:, perm]
        x = np.random.Generator(np.random.PCG64(2)).uniform(size=(20, 2))
        np.testing.assert_allclose(mlp.forward(net, x)[0], mlp.forward(other, x)[0], rtol=1e-13)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            mlp.forward(zero_net(), [1.0, 2.0, 3.0])

    def test_bad_shapes_rejected(self):
        with pytest.raises(ValueError):
            mlp.MlpNetwork((2, 5, 1), [np.zeros((5, 2)), np.zeros((1, 4))], [np.zeros(5), np.zeros(1)])


class TestGradient:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_central_differences(self, seed):
        rng = np.random.Generator(np.random.PCG64(100 + seed))
        net = mlp.MlpNetwork.initialise(init_scale=1.0, seed=seed)
        x = rng.uniform(size=(10, 2))
        y = rng.uniform(size=(10, 1))
        analytic = mlp.gradient(net, x, y)
        base = net.params_flat()
        numeric = np.empty_like(base)
        h = 1e-5

        def error_at(i, step):
            p = base.copy()
            p[i] += step
            net.set_params_flat(p)
            return mlp.total_error(net, x, y)

        for i in range(base.size):
            numeric[i] = (error_at(i, h) - error_at(i, -h)) / (2 * h)
        net.set_params_flat(base)
        rel = np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
        assert rel.max() <= 1e-4


class TestTrainEpoch:
    def test_exact_fit_is_fixed_point(self, params):
        one = build_training_set(params, 16.0, 16.0)
        net = mlp.MlpNetwork.initialise(seed=3)
        x, y = mlp._arrays(net, one)
        out, _ = mlp.forward(net, x)
        net.thresholds[-1] += out[0] - y[0]
        before = net.params_flat().copy()
        eps = mlp.train_epoch(net, one, mlp.MlpTrainConfig())
        assert eps == pytest.approx(0.0, abs=1e-28)
        np.testing.assert_allclose(net.params_flat(), before, rtol=0, atol=1e-15)

    def test_error_decreases_early(self, dataset):
        _, hist = mlp.train(mlp.MlpNetwork.initialise(seed=0), dataset, mlp.MlpTrainConfig(learning_rate=0.01, max_epochs=10))
        assert len(hist) == 10
        assert np.count_nonzero(np.diff(hist) > 0) <= 1

    def test_empty_dataset(self, dataset):
        from wecslab.refgen import ReferenceDataset

        with pytest.raises(ValueError):
            mlp.train_epoch(mlp.MlpNetwork.initialise(), ReferenceDataset((), 0.5), mlp.MlpTrainConfig())

    def test_divergence_reported(self, dataset):
        with pytest.raises(TrainingDivergedError, match="epoch"):
            mlp.train(mlp.MlpNetwork.initialise(seed=0), dataset, mlp.MlpTrainConfig(learning_rate=1e3, max_epochs=500))


class TestTrain:
    def test_infinite_target_stops_after_one_epoch(self, dataset):
        net = mlp.MlpNetwork.initialise(seed=0)
        trained, hist = mlp.train(net, dataset, mlp.MlpTrainConfig(target_error=math.inf))
        assert len(hist) == 1
        assert not np.array_equal(trained.params_flat(), net.params_flat())

    def test_held_out_rmse(self, mlp_fit, split):
        net, _ = mlp_fit
        assert mlp.rmse_deg(net, split[1]) <= 0.5

    def test_deterministic(self, split, mlp_fit):
        again, _ = mlp.fit(split[0], mlp.MlpTrainConfig(seed=0, max_epochs=300))
        once, _ = mlp.fit(split[0], mlp.MlpTrainConfig(seed=0, max_epochs=300))
        assert np.array_equal(again.params_flat(), once.params_flat())

    def test_reported_error_recomputes(self, mlp_fit, split):
        net, hist = mlp_fit
        x, y = mlp._arrays(net, split[0])
        assert mlp.total_error(net, x, y) == pytest.approx(hist[-1], rel=1e-12)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0}, {"max_epochs": 0}, {"target_error": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ValueError):
            mlp.MlpTrainConfig(**kw)


class TestPredict:
    @pytest.mark.parametrize("p_pu", [0.0, 0.3, 0.6, 1.0])
    def test_below_rated_is_fine_pitch(self, mlp_fit, p_pu):
        assert mlp.predict_pitch(mlp_fit[0], 8.0, p_pu) == pytest.approx(-2.0, abs=0.5)

    def test_monotone_in_wind(self, mlp_fit):
        beta = [mlp.predict_pitch(mlp_fit[0], v, 1.0) for v in np.arange(12, 25.01, 0.5)]
        assert all(b >= a for a, b in zip(beta, beta[1:]))

    def test_clamped(self):
        net = zero_net()
        net.thresholds[-1][0] = -50.0
        assert mlp.predict_pitch(net, 20, 1) == 30.0
        net.thresholds[-1][0] = 50.0
        assert mlp.predict_pitch(net, 20, 1) == -2.0


def test_save_load_round_trip(mlp_fit, tmp_path):
    net = mlp_fit[0]
    back = load_network(net.save(tmp_path / "m.json"))
    assert isinstance(back, mlp.MlpNetwork)
    assert np.array_equal(back.params_flat(), net.params_flat())
    assert mlp.predict_pitch(back, 17.3, 1.0) == mlp.predict_pitch(net, 17.3, 1.0)
