import math

import numpy as np
import pytest

from wecslab import rbf
from wecslab.netio import Scaler, TrainingDivergedError, load_network
from wecslab.refgen import build_training_set


class TestActivation:
    def test_at_centre(self):
        assert rbf.rbf_activation([0.2, 0.3, 0.4], [0.2, 0.3, 0.4], 0.5) == 1.0

    def test_unit_distance(self):
        assert rbf.rbf_activation([0.5, 0.0, 0.0], [0.0, 0.0, 0.0], 0.5) == pytest.approx(math.exp(-1))

    def test_far_field(self):
        assert rbf.rbf_activation([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], 0.1) < 1e-43

    def test_rejects_zero_width(self):
        with pytest.raises(ValueError):
            rbf.rbf_activation([0.0], [0.0], 0.0)

    def test_vectorised_agrees(self):
        rng = np.random.Generator(np.random.PCG64(0))
        net = rbf.RbfNetwork(rng.uniform(size=(4, 3)), rng.uniform(0.2, 1, 4), np.ones((1, 4)))
        u = rng.uniform(size=3)
        scalar = [rbf.rbf_activation(u, c, s) for c, s in zip(net.centers, net.widths)]
        np.testing.assert_allclose(rbf.hidden_outputs(net, u), scalar, rtol=1e-14)


class TestForward:
    def test_zero_weights(self):
        net = rbf.RbfNetwork(np.eye(3), np.ones(3), np.zeros((1, 3)))
        assert rbf.forward(net, [0.1, 0.2, 0.3])[0] == 0.0

    def test_single_centre(self):
        u = np.array([0.4, 0.5, 0.6])
        net = rbf.RbfNetwork(u[None, :], [0.3], [[2.5]])
        assert rbf.forward(net, u)[0] == 2.5

    def test_two_symmetric_centres(self):
        u = np.array([0.5, 0.5, 0.5])
        d = np.array([0.1, 0.0, 0.0])
        net = rbf.RbfNetwork(np.stack([u - d, u + d]), [0.2, 0.2], [[1.5, 1.5]])
        f = math.exp(-((0.1 / 0.2) ** 2))
        assert rbf.forward(net, u)[0] == pytest.approx(2 * 1.5 * f, rel=1e-14)

    def test_dimension_mismatch(self):
        net = rbf.RbfNetwork(np.eye(3), np.ones(3), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            rbf.forward(net, [0.1, 0.2])

    @pytest.mark.parametrize(
        "centers,widths,weights",
        [(np.eye(3), [1, 1, 0], np.zeros((1, 3))), (np.eye(3), [1, 1], np.zeros((1, 3))), (np.eye(3), [1, 1, 1], np.zeros((1, 2)))],
    )
    def test_invalid_network(self, centers, widths, weights):
        with pytest.raises(ValueError):
            rbf.RbfNetwork(centers, widths, weights)


class TestPlaceCenters:
    def test_one_centre_per_sample(self, dataset):
        centers, widths = rbf.place_centers(dataset, len(dataset))
        u = Scaler.for_inputs(rbf.RBF_INPUTS).forward(dataset.inputs(rbf.RBF_INPUTS))
        np.testing.assert_array_equal(centers, u)
        assert np.all(widths > 0)

    @pytest.mark.parametrize("strategy", ["sample", "grid"])
    def test_widths_positive(self, dataset, strategy):
        _, widths = rbf.place_centers(dataset, 10, strategy)
        assert widths.shape == (10,) and np.all(widths > 0)

    @pytest.mark.parametrize("n,h", [(27, 10), (22, 10), (43, 10), (10, 10), (43, 7), (5, 2)])
    def test_evenly_spaced_indices(self, n, h):
        idx = rbf._evenly_spaced(n, h)
        gaps = set(np.diff(idx).tolist())
        step = (n - 1) / (h - 1)
        assert idx[0] == 0 and idx[-1] == n - 1
        assert gaps <= {math.floor(step), math.ceil(step)}

    def test_too_few_rows(self, params):
        with pytest.raises(ValueError, match="fewer than"):
            rbf.place_centers(build_training_set(params, 12.0, 13.0), 10)


class TestTrain:
    def test_one_step_exact_fit(self, params):
        one = build_training_set(params, 16.0, 16.0)
        c, _ = rbf.place_centers(one, 1)
        net = rbf.RbfNetwork(c, [0.1], [[0.0]])
        trained, hist = rbf.train(net, one, rbf.RbfTrainConfig(learning_rate=1.0, max_epochs=1))
        assert hist[0] == pytest.approx(0.0, abs=1e-30)
        assert trained.out_weights[0, 0] == pytest.approx(rbf._arrays(net, one)[1][0, 0])

    def test_does_not_mutate_input(self, dataset):
        net = rbf.build(dataset)
        before = net.out_weights.copy()
        rbf.train(net, dataset, rbf.RbfTrainConfig(max_epochs=3))
        assert np.array_equal(net.out_weights, before)

    def test_reported_error_recomputes(self, rbf_fit, split):
        net, hist = rbf_fit
        u, y = rbf._arrays(net, split[0])
        assert rbf.total_error(net, u, y) == pytest.approx(hist[-1], rel=1e-12)

    def test_held_out_rmse(self, rbf_fit, split):
        assert rbf.rmse_deg(rbf_fit[0], split[1]) <= 0.8

    def test_default_rate_under_stability_bound(self, split):
        assert rbf.RbfTrainConfig().learning_rate < rbf.stability_bound(rbf.build(split[0]), split[0])

    @pytest.mark.parametrize("alpha", [0.05, 0.02, 0.01])
    def test_error_non_increasing(self, split, alpha):
        _, hist = rbf.fit(split[0], rbf.RbfTrainConfig(learning_rate=alpha, seed=0))
        assert np.all(np.diff(hist) <= 0)

    def test_larger_step_can_limit_cycle(self, split):
        # below the stability bound but far from zero, per-sample LMS can
        # settle into a cycle whose epoch error wobbles by a tiny amount
        _, hist = rbf.fit(split[0], rbf.RbfTrainConfig(learning_rate=0.1, seed=0))
        rises = np.diff(hist)
        assert rises.max() <= 1e-7 * hist[0]

    def test_exact_interpolation(self, dataset):
        centers, widths = rbf.place_centers(dataset, len(dataset))
        # width equal to the centre spacing keeps the activation matrix well-conditioned
        net = rbf.RbfNetwork(centers, widths / rbf.WIDTH_OVERLAP, np.zeros((1, len(dataset))))
        u, _ = rbf._arrays(net, dataset)
        assert np.linalg.cond(rbf.hidden_outputs(net, u)) < 10
        cfg = rbf.RbfTrainConfig(learning_rate=0.5, target_error=1e-7 / len(dataset), max_epochs=5000)
        _, hist = rbf.train(net, dataset, cfg)
        assert hist[-1] < 1e-6 and len(hist) < cfg.max_epochs

    def test_divergence_reported(self, split):
        with pytest.raises(TrainingDivergedError, match="stability bound"):
            rbf.fit(split[0], rbf.RbfTrainConfig(learning_rate=50.0))

    def test_deterministic(self, split):
        a, _ = rbf.fit(split[0], rbf.RbfTrainConfig(seed=5, max_epochs=50))
        b, _ = rbf.fit(split[0], rbf.RbfTrainConfig(seed=5, max_epochs=50))
        assert np.array_equal(a.out_weights, b.out_weights)


class TestPredict:
    @pytest.mark.parametrize("v", [5.0, 8.0, 11.0])
    def test_below_rated(self, rbf_fit, op, params, v):
        omega_pu = op.lambda_star * v / params.radius / op.omega_rated
        p_pu = (v / params.v_rated) ** 3
        assert rbf.predict_pitch(rbf_fit[0], v, p_pu, omega_pu) == pytest.approx(-2.0, abs=0.8)

    def test_clamp(self):
        net = rbf.RbfNetwork(np.full((1, 3), 0.5), [1.0], [[100.0]])
        assert rbf.predict_pitch(net, 16, 1, 1) == 30.0

    def test_monotone_in_wind(self, rbf_fit):
        # known to fail: the fitted map overshoots the top of the pitch range
        # near cut-out, is clamped, then dips back below it at 25 m/s
        beta = [rbf.predict_pitch(rbf_fit[0], v, 1.0, 1.0) for v in np.arange(12, 25.01, 0.5)]
        assert all(b >= a for a, b in zip(beta, beta[1:]))


def test_save_load_round_trip(rbf_fit, tmp_path):
    net = rbf_fit[0]
    back = load_network(net.save(tmp_path / "r.json"))
    assert isinstance(back, rbf.RbfNetwork)
    assert np.array_equal(back.out_weights, net.out_weights) and np.array_equal(back.centers, net.centers)
    assert rbf.predict_pitch(back, 18, 1, 1) == rbf.predict_pitch(net, 18, 1, 1)
