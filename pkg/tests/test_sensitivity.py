import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sensguide as sg
from sensguide.errors import InputError
from sensguide.sensitivity import DEFAULT_RADII, ErrorCurve


class TestForwardBackward:
    def test_pair_identity_is_exact(self):
        # differences of two stored trajectories recover the seed offset bit
        # for bit, because both ends are read from the same arrays
        sys = sg.make_system("rotation2d")
        x0a = np.array([1.2, 1.8])
        x0b = np.array([1.25, 1.74])
        ta = sg.simulate(sys, x0a)
        tb = sg.simulate(sys, x0b)
        x_t, v, v_minus = sg.inverse_sensitivity_from_pair(ta, tb, 1.0)
        assert np.array_equal(v_minus, x0b - x0a)
        assert np.array_equal(x_t, ta.samples[100])
        assert np.array_equal(v, tb.samples[100] - ta.samples[100])

    def test_oracle_matches_pair(self, rng):
        sys = sg.make_system("damped2d")
        for _ in range(3):
            x0a = sys.initial_set.sample(rng)
            x0b = x0a + 0.02 * rng.normal(size=2)
            ta = sg.simulate(sys, x0a)
            tb = sg.simulate(sys, x0b)
            x_t, v, v_minus = sg.inverse_sensitivity_from_pair(ta, tb, 1.5)
            est = sg.inverse_sensitivity_oracle(sys, x_t, v, 1.5)
            assert np.linalg.norm(est - v_minus) < 1e-6

    def test_mismatched_pair_rejected(self):
        sys = sg.make_system("rotation2d")
        other = sg.make_system("rotation2d", h=0.02, T=125)
        ta = sg.simulate(sys, [1.5, 1.5])
        tb = sg.simulate(other, [1.5, 1.6])
        with pytest.raises(InputError):
            sg.inverse_sensitivity_from_pair(ta, tb, 1.0)

    def test_forward_linear_in_v_for_linear_system(self, rng):
        sys = sg.make_system("rotation2d")
        x0 = np.array([1.3, 1.7])
        v = np.array([0.01, -0.02])
        one = sg.sensitivity_exact(sys, x0, v, 1.0)
        two = sg.sensitivity_exact(sys, x0, 2 * v, 1.0)
        assert np.allclose(two, 2 * one, atol=1e-12)
        # independence from the anchor point
        other = sg.sensitivity_exact(sys, np.array([1.9, 1.1]), v, 1.0)
        assert np.allclose(other, one, atol=1e-10)

    @given(
        st.floats(-0.04, 0.04),
        st.floats(-0.04, 0.04),
        st.sampled_from([0.25, 1.0, 2.0]),
    )
    @settings(max_examples=15, deadline=None)
    def test_inverse_of_forward_round_trip(self, v1, v2, t):
        v = np.array([v1, v2])
        if np.linalg.norm(v) < 1e-6:
            return
        sys = sg.make_system("vdp2d")
        x0 = np.array([1.2, 1.3])
        phi = sg.sensitivity_exact(sys, x0, v, t)
        x_t = sg.simulate(sys, x0, steps=sys.time_index(t)).samples[-1]
        back = sg.inverse_sensitivity_oracle(sys, x_t, phi, t)
        assert np.linalg.norm(back - v) < 1e-6


class TestEtaBounds:
    def test_rotation_is_isometric(self):
        A = np.array([[0.0, 1.0], [-1.0, 0.0]])
        eta1, eta2 = sg.eta_bounds(A, 1.7)
        assert math.isclose(eta1, 1.0, rel_tol=1e-12)
        assert math.isclose(eta2, 1.0, rel_tol=1e-12)

    def test_diagonal_decay(self):
        A = np.diag([-1.0, -2.0])
        eta1, eta2 = sg.eta_bounds(A, 0.5)
        assert math.isclose(eta1, math.exp(-1.0), rel_tol=1e-12)
        assert math.isclose(eta2, math.exp(-0.5), rel_tol=1e-12)

    def test_linear_state_matrix(self):
        sys = sg.make_system("damped2d")
        A = sg.linear_state_matrix(sys)
        assert np.allclose(A, [[0.0, 1.0], [-1.0, -0.5]])
        with pytest.raises(InputError):
            sg.linear_state_matrix(sg.make_system("vdp2d"))


class TestErrorCurve:
    def test_validation(self):
        with pytest.raises(InputError):
            ErrorCurve(radii=(0.01, 0.005), eps_abs=(0.1, 0.1), samples_per_radius=3)
        with pytest.raises(InputError):
            ErrorCurve(radii=(0.01,), eps_abs=(-0.1,), samples_per_radius=3)

    def test_csv_format(self, tmp_path):
        curve = ErrorCurve(radii=(0.001, 0.01), eps_abs=(1e-5, 2e-4), samples_per_radius=7)
        path = tmp_path / "curve.csv"
        curve.save_csv(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["radius", "eps_abs", "samples"]
        assert float(rows[1][0]) == 0.001
        assert float(rows[2][1]) == 2e-4
        assert rows[1][2] == "7"

    def test_exact_oracle_curve_is_tiny(self):
        # scoring the oracle against itself isolates integrator noise
        sys = sg.make_system("rotation2d")
        oracle = sg.ExactOracle(sys)
        curve = sg.abs_error_curve(
            oracle, sys, radii=(0.005, 0.05), samples_per_radius=8, seed=0
        )
        assert all(e < 1e-7 for e in curve.eps_abs)

    def test_threaded_matches_serial(self):
        sys = sg.make_system("rotation2d")
        oracle = sg.ExactOracle(sys)
        kw = dict(radii=(0.005, 0.02), samples_per_radius=6, seed=11)
        serial = sg.abs_error_curve(oracle, sys, threads=1, **kw)
        threaded = sg.abs_error_curve(oracle, sys, threads=3, **kw)
        assert np.array_equal(serial.eps_abs, threaded.eps_abs)

    def test_default_radii(self):
        assert DEFAULT_RADII == (0.001, 0.0025, 0.005, 0.01, 0.025, 0.05)
