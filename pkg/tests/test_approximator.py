import numpy as np
import pytest

import sensguide as sg
from sensguide.approximator import (
    _PARAM_NAMES,
    MLPModel,
    loss_and_grads,
)
from sensguide.errors import (
    DegeneratePredictionError,
    InputError,
    ModelFormatError,
    TrainingDivergedError,
)


def tiny_model(seed=0, n=2, rbf=6, hidden=5) -> MLPModel:
    rng = np.random.default_rng(seed)
    d = 2 * n + 1
    return MLPModel(
        system_name="toy",
        kind="inverse",
        n=n,
        t_scale=1.0,
        centers=rng.normal(size=(rbf, d)),
        widths=rng.uniform(0.8, 1.6, size=rbf),
        w1=rng.normal(size=(hidden, rbf)) * 0.5,
        b1=rng.normal(size=hidden) * 0.1,
        w2=rng.normal(size=(hidden, hidden)) * 0.5,
        b2=rng.normal(size=hidden) * 0.1,
        w3=rng.normal(size=(n, hidden)) * 0.5,
        b3=rng.normal(size=n) * 0.1,
    )


def tiny_dataset(seed=0, **kw):
    sys = sg.make_system("rotation2d")
    kw.setdefault("num_anchors", 4)
    kw.setdefault("num_neighbors", 2)
    kw.setdefault("time_subsample", 125)
    return sg.generate_dataset(sys, seed=seed, **kw)


class TestGradients:
    def test_analytic_matches_finite_differences(self):
        """Central differences against backprop for every parameter tensor.

        Seeds picked so every pre-activation and residual sits at least
        0.04 away from its kink; the 1e-6 probes stay on one linear piece.
        """
        model = tiny_model(seed=19)
        rng = np.random.default_rng(19)
        X = rng.normal(size=(5, 5))
        Y = rng.normal(size=(5, 2))
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        loss, grads = loss_and_grads(model, X, Y)
        assert np.isfinite(loss)

        eps = 1e-6
        worst = {}
        for name in _PARAM_NAMES:
            arr = getattr(model, name)
            g = grads[name]
            assert g.shape == arr.shape
            flat = arr.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            rel_max = 0.0
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + eps
                lp, _ = loss_and_grads(model, X, Y)
                flat[idx] = orig - eps
                lm, _ = loss_and_grads(model, X, Y)
                flat[idx] = orig
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(gflat[idx]), 1e-8)
                rel_max = max(rel_max, abs(fd - gflat[idx]) / denom)
            worst[name] = rel_max
            assert rel_max < 1e-4, f"{name}: worst relative error {rel_max}"

    def test_gradient_descends(self):
        model = tiny_model(seed=1)
        rng = np.random.default_rng(5)
        X = rng.normal(size=(32, 5))
        Y = rng.normal(size=(32, 2))
        Y /= np.linalg.norm(Y, axis=1, keepdims=True)
        loss0, grads = loss_and_grads(model, X, Y)
        for name in _PARAM_NAMES:
            getattr(model, name).reshape(-1)[:] -= 0.01 * np.asarray(
                grads[name]
            ).reshape(-1)
        loss1, _ = loss_and_grads(model, X, Y)
        assert loss1 < loss0


class TestTraining:
    def test_loss_improves_over_training(self):
        ds = tiny_dataset()
        base = sg.TrainConfig(epochs=0, seed=0, train_fraction=1.0)
        model0, report0 = sg.train(ds, base)
        cfg = sg.TrainConfig(epochs=6, seed=0, train_fraction=1.0)
        model, report = sg.train(ds, cfg)
        assert report.mre_percent < report0.mre_percent
        assert report.epochs_run == 6

    def test_internal_split_differs_from_full(self):
        ds = tiny_dataset()
        split = sg.train(ds, sg.TrainConfig(epochs=2, seed=0, train_fraction=0.8))[1]
        full = sg.train(ds, sg.TrainConfig(epochs=2, seed=0, train_fraction=1.0))[1]
        assert split.mse != full.mse  # scored on different rows

    def test_deterministic_given_seed(self):
        ds = tiny_dataset()
        cfg = sg.TrainConfig(epochs=2, seed=7)
        m1, r1 = sg.train(ds, cfg)
        m2, r2 = sg.train(ds, cfg)
        assert np.array_equal(m1.w1, m2.w1)
        assert np.array_equal(m1.centers, m2.centers)
        assert r1.mse == r2.mse

    def test_divergence_detected(self):
        # the step must be large enough to overflow the dense chain before
        # the radial layer saturates to zero and freezes the network
        ds = tiny_dataset()
        with pytest.raises(TrainingDivergedError), np.errstate(all="ignore"):
            import warnings

            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                sg.train(ds, sg.TrainConfig(learning_rate=1e154, epochs=3, seed=0))

    def test_empty_dataset_rejected(self):
        ds = tiny_dataset()
        empty = ds.subset(np.array([], dtype=int))
        with pytest.raises(InputError):
            sg.train(empty, sg.TrainConfig(epochs=1))

    def test_report_dict_isolates_timing(self):
        ds = tiny_dataset()
        _, report = sg.train(ds, sg.TrainConfig(epochs=1, seed=0))
        d = report.to_dict()
        assert "wall_time" not in d
        assert "wall_time" in d["timing"]


class TestPredictContract:
    def test_predictions_are_unit(self):
        model = tiny_model()
        out = model.predict(np.array([0.1, 0.2]), np.array([1.0, 0.0]), 0.5)
        assert out.shape == (2,)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12

    def test_non_unit_direction_rejected(self):
        model = tiny_model()
        with pytest.raises(InputError):
            model.predict(np.zeros(2), np.array([1.0, 1.0]), 0.5)

    def test_degenerate_output_raises(self):
        model = tiny_model()
        model.w3 = np.zeros_like(model.w3)
        model.b3 = np.zeros_like(model.b3)
        with pytest.raises(DegeneratePredictionError):
            model.predict(np.zeros(2), np.array([0.0, 1.0]), 0.5)

    def test_predict_batch_matches_single(self):
        model = tiny_model()
        rng = np.random.default_rng(0)
        X = rng.normal(size=(4, 2))
        V = rng.normal(size=(4, 2))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        T = rng.uniform(0.1, 1.0, size=4)
        batch = model.predict_batch(X, V, T)
        for i in range(4):
            assert np.allclose(batch[i], model.predict(X[i], V[i], T[i]), atol=1e-12)

    def test_predict_direction_dispatch(self):
        model = tiny_model()
        v = np.array([0.0, 1.0])
        out = sg.predict_direction(model, np.zeros(2), v, 0.5)
        assert np.allclose(out, model.predict(np.zeros(2), v, 0.5))
        with pytest.raises(InputError):
            sg.predict_direction(object(), np.zeros(2), v, 0.5)


class TestOracles:
    def test_exact_oracle_estimate(self):
        sys = sg.make_system("damped2d")
        oracle = sg.ExactOracle(sys)
        x_t = np.array([1.1, 0.4])
        v = np.array([0.02, -0.01])
        est = oracle.estimate(x_t, v, 1.0)
        ref = sg.inverse_sensitivity_oracle(sys, x_t, v, 1.0)
        assert np.array_equal(est, ref)

    def test_exact_oracle_predict_direction(self):
        # linear flow: direction is radius-invariant, so the probe direction
        # must match the normalized full-vector answer
        sys = sg.make_system("rotation2d")
        oracle = sg.ExactOracle(sys)
        x_t = np.array([1.5, 0.2])
        v_hat = np.array([0.6, 0.8])
        d_hat = oracle.predict(x_t, v_hat, 1.0)
        assert abs(np.linalg.norm(d_hat) - 1.0) < 1e-12
        full = oracle.estimate(x_t, 0.03 * v_hat, 1.0)
        assert np.allclose(d_hat, full / np.linalg.norm(full), atol=1e-7)

    def test_forward_kind(self):
        sys = sg.make_system("rotation2d")
        oracle = sg.ExactOracle(sys, kind="forward")
        v = np.array([0.01, 0.0])
        est = oracle.estimate(np.array([1.5, 1.5]), v, 1.0)
        ref = sg.sensitivity_exact(sys, np.array([1.5, 1.5]), v, 1.0)
        assert np.array_equal(est, ref)

    def test_bad_kind(self):
        with pytest.raises(InputError):
            sg.ExactOracle(sg.make_system("rotation2d"), kind="diagonal")

    def test_corrupted_error_within_model(self, rng):
        sys = sg.make_system("damped2d")
        eps_rel, eps_abs = 0.05, 1e-4
        noisy = sg.CorruptedOracle(sys, eps_rel, eps_abs, seed=3)
        exact = sg.ExactOracle(sys)
        for _ in range(10):
            x_t = rng.uniform(0.5, 1.5, size=2)
            v = rng.normal(size=2) * 0.05
            e = exact.estimate(x_t, v, 1.0)
            err = np.linalg.norm(noisy.estimate(x_t, v, 1.0) - e)
            assert err <= eps_rel * np.linalg.norm(e) + eps_abs + 1e-12

    def test_corrupted_deterministic_per_seed(self):
        sys = sg.make_system("damped2d")
        args = (np.array([1.0, 1.0]), np.array([0.01, 0.02]), 1.0)
        a = sg.CorruptedOracle(sys, 0.1, 1e-3, seed=5).estimate(*args)
        b = sg.CorruptedOracle(sys, 0.1, 1e-3, seed=5).estimate(*args)
        c = sg.CorruptedOracle(sys, 0.1, 1e-3, seed=6).estimate(*args)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_zero_corruption_is_exact(self):
        sys = sg.make_system("rotation2d")
        args = (np.array([1.0, 1.0]), np.array([0.01, 0.02]), 0.5)
        noisy = sg.CorruptedOracle(sys, 0.0, 0.0, seed=0).estimate(*args)
        exact = sg.ExactOracle(sys).estimate(*args)
        assert np.array_equal(noisy, exact)

    def test_negative_levels_rejected(self):
        with pytest.raises(InputError):
            sg.CorruptedOracle(sg.make_system("rotation2d"), -0.1, 0.0)


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        model = tiny_model(seed=11)
        path = tmp_path / "model.json"
        sg.save_model(model, path)
        again = sg.load_model(path)
        for name in _PARAM_NAMES:
            assert np.array_equal(getattr(again, name), getattr(model, name))
        assert again.system_name == model.system_name
        assert again.kind == model.kind
        assert again.t_scale == model.t_scale
        x = np.array([0.3, -0.2])
        v = np.array([0.0, 1.0])
        assert np.array_equal(again.predict(x, v, 0.7), model.predict(x, v, 0.7))

    def test_rejects_bad_version(self, tmp_path):
        model = tiny_model()
        path = tmp_path / "model.json"
        sg.save_model(model, path)
        import json

        doc = json.loads(path.read_text())
        doc["version"] = "99"
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError) as ei:
            sg.load_model(path)
        assert "version" in str(ei.value)

    def test_rejects_broken_shapes(self, tmp_path):
        import json

        model = tiny_model()
        path = tmp_path / "model.json"
        sg.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["layers"][1]["weights"] = [[1.0, 2.0]]
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError):
            sg.load_model(path)

    def test_rejects_nonpositive_widths(self, tmp_path):
        import json

        model = tiny_model()
        path = tmp_path / "model.json"
        sg.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["layers"][0]["widths"][0] = 0.0
        path.write_text(json.dumps(doc))
        with pytest.raises(ModelFormatError) as ei:
            sg.load_model(path)
        assert "widths" in str(ei.value)

    def test_rejects_not_json(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text("{not json")
        with pytest.raises(ModelFormatError):
            sg.load_model(path)

    def test_trained_model_round_trip(self, tmp_path):
        ds = tiny_dataset()
        model, _ = sg.train(ds, sg.TrainConfig(epochs=2, seed=0))
        path = tmp_path / "trained.json"
        sg.save_model(model, path)
        again = sg.load_model(path)
        metrics_a = sg.evaluate_model(model, ds)
        metrics_b = sg.evaluate_model(again, ds)
        assert metrics_a == metrics_b
