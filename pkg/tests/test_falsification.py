"""Safety specifications, robustness, and the two falsification searches."""

import json
import math

import numpy as np
import pytest

import sensguide as sg

UNIT_BOX = sg.Box([0.0, 0.0], [1.0, 1.0])


def static_system(x0_lo=(0.0, 0.0), x0_hi=(1.0, 1.0)):
    """Zero dynamics: every trajectory sits still at its initial state."""
    return sg.system_from_dict(
        {
            "name": "static2d",
            "dimension": 2,
            "plant": {"kind": "linear", "A": [[0.0, 0.0], [0.0, 0.0]]},
            "h": 0.01,
            "T": 100,
            "initial_set": {"lo": list(x0_lo), "hi": list(x0_hi)},
        }
    )


# ---------------------------------------------------------------------------
# signed distance and robustness


def test_signed_distance_outside_is_euclidean():
    # 3-4-5 triangle from the corner (1, 1)
    assert sg.signed_distance_to_box([4.0, 5.0], UNIT_BOX) == pytest.approx(5.0)
    assert sg.signed_distance_to_box([1.5, 0.5], UNIT_BOX) == pytest.approx(0.5)
    assert sg.signed_distance_to_box([-2.0, 0.5], UNIT_BOX) == pytest.approx(2.0)


def test_signed_distance_inside_is_negative_margin():
    assert sg.signed_distance_to_box([0.3, 0.4], UNIT_BOX) == pytest.approx(-0.3)
    assert sg.signed_distance_to_box([0.5, 0.5], UNIT_BOX) == pytest.approx(-0.5)


def test_signed_distance_boundary_is_zero():
    assert sg.signed_distance_to_box([0.0, 0.5], UNIT_BOX) == 0.0
    assert sg.signed_distance_to_box([1.0, 1.0], UNIT_BOX) == 0.0


def test_signed_distance_batch_matches_singles():
    pts = np.array([[4.0, 5.0], [0.3, 0.4], [0.0, 0.5]])
    batch = sg.signed_distance_to_box(pts, UNIT_BOX)
    assert batch.shape == (3,)
    for row, got in zip(pts, batch):
        assert got == sg.signed_distance_to_box(row, UNIT_BOX)


def test_robustness_hand_value_safe():
    # translation flow: x(t) = x0 + (t, 0); window samples span x1 in [.7, 1.2]
    system = sg.make_system("constant2d")
    traj = sg.simulate(system, [0.2, 0.5], steps=100)
    spec = sg.SafetySpec(sg.Box([2.0, 0.0], [3.0, 1.0]), (0.5, 1.0))
    assert sg.robustness(traj, spec) == pytest.approx(0.8, abs=1e-9)


def test_robustness_hand_value_violating():
    system = sg.make_system("constant2d")
    traj = sg.simulate(system, [0.2, 0.5], steps=100)
    spec = sg.SafetySpec(sg.Box([1.0, 0.0], [1.1, 1.0]), (0.5, 1.0))
    # deepest sample sits at the box's x-midline, margin 0.05
    assert sg.robustness(traj, spec) == pytest.approx(-0.05, abs=1e-9)


def test_robustness_window_edges():
    system = sg.make_system("constant2d")
    traj = sg.simulate(system, [0.2, 0.5], steps=100)
    box = sg.Box([2.0, 0.0], [3.0, 1.0])
    with pytest.raises(sg.InputError):
        sg.robustness(traj, sg.SafetySpec(box, (0.5, 2.0)))  # past horizon
    with pytest.raises(sg.InputError):
        sg.robustness(traj, sg.SafetySpec(box, (0.551, 0.559)))  # no sample
    # a window that collapses onto one grid point is fine
    single = sg.robustness(traj, sg.SafetySpec(box, (0.55, 0.55)))
    assert single == pytest.approx(2.0 - 0.75, abs=1e-9)


# ---------------------------------------------------------------------------
# SafetySpec plumbing


def test_spec_validation():
    box = sg.Box([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(sg.InputError):
        sg.SafetySpec(box, (0.5, 0.2))
    with pytest.raises(sg.InputError):
        sg.SafetySpec(box, (-0.1, 0.2))


def test_spec_dict_round_trip():
    spec = sg.SafetySpec(sg.Box([0.0, -1.0], [1.0, 2.0]), (0.25, 1.5))
    again = sg.SafetySpec.from_dict(spec.to_dict())
    assert again == spec


def test_spec_from_dict_rejects_malformed():
    with pytest.raises(sg.InputError, match="unsafe_box"):
        sg.SafetySpec.from_dict({"interval": [0, 1]})
    with pytest.raises(sg.InputError):
        sg.SafetySpec.from_dict(
            {"unsafe_box": {"lo": [0], "hi": [1]}, "interval": [0, 1, 2]}
        )


def test_load_spec_round_trip(tmp_path):
    spec = sg.SafetySpec(sg.Box([2.7, -0.7], [2.8, -0.5]), (0.9, 1.1))
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec.to_dict()))
    assert sg.load_spec(path) == spec


def test_load_spec_errors(tmp_path):
    with pytest.raises(sg.InputError):
        sg.load_spec(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("not json {")
    with pytest.raises(sg.InputError):
        sg.load_spec(bad)
    arr = tmp_path / "arr.json"
    arr.write_text("[1, 2]")
    with pytest.raises(sg.InputError):
        sg.load_spec(arr)


# ---------------------------------------------------------------------------
# pick_target


def test_pick_target_samples_box_and_earliest_closest_time(rng):
    # static trajectory: every window sample ties, so the earliest wins
    system = static_system()
    traj = sg.simulate(system, [0.5, 0.5], steps=100)
    spec = sg.SafetySpec(sg.Box([2.0, 2.0], [3.0, 3.0]), (0.3, 0.7))
    z, t = sg.pick_target(traj, spec, rng)
    assert t == pytest.approx(0.3)
    assert spec.unsafe_box.contains(z)


def test_pick_target_prefers_closest_sample():
    system = sg.make_system("constant2d")
    traj = sg.simulate(system, [0.2, 0.5], steps=100)
    # trajectory walks toward the box, so the last window sample is closest
    spec = sg.SafetySpec(sg.Box([2.0, 0.0], [3.0, 1.0]), (0.5, 1.0))
    _, t = sg.pick_target(traj, spec, np.random.default_rng(0))
    assert t == pytest.approx(1.0)


def test_pick_target_deterministic_per_rng_seed():
    system = static_system()
    traj = sg.simulate(system, [0.5, 0.5], steps=100)
    spec = sg.SafetySpec(sg.Box([2.0, 2.0], [3.0, 3.0]), (0.3, 0.7))
    z1, t1 = sg.pick_target(traj, spec, np.random.default_rng(5))
    z2, t2 = sg.pick_target(traj, spec, np.random.default_rng(5))
    assert np.array_equal(z1, z2) and t1 == t2


# ---------------------------------------------------------------------------
# guided falsification

# box of half-width 0.1 around the time-1 image of (1.6, 1.5); every target
# in it has its preimage inside theta throughout the window, so the exact
# oracle cannot be blocked by the initial-set projection
ROTATION_TUBE_SPEC = sg.SafetySpec(
    sg.Box([2.027, -0.635], [2.226, -0.436]), (0.9, 1.1)
)


def test_falsify_rd_breaks_reachable_spec():
    system = sg.make_system("rotation2d")
    res = sg.falsify_rd(system, ROTATION_TUBE_SPEC, seed=0)
    assert res.falsified
    assert res.rho < 0
    assert res.method == "guided"
    assert res.k <= 10
    assert system.initial_set.contains(res.x0, tol=1e-12)
    assert sg.robustness(res.trajectory, ROTATION_TUBE_SPEC) == pytest.approx(res.rho)
    assert ROTATION_TUBE_SPEC.unsafe_box.contains(res.target)
    assert 0.9 <= res.t <= 1.1


def test_falsify_rd_deterministic():
    system = sg.make_system("rotation2d")
    a = sg.falsify_rd(system, ROTATION_TUBE_SPEC, seed=3)
    b = sg.falsify_rd(system, ROTATION_TUBE_SPEC, seed=3)
    assert a.k == b.k and a.rho == b.rho
    assert np.array_equal(a.x0, b.x0)
    assert a.rho_history == b.rho_history


def test_falsify_rd_unreachable_spec_exhausts_bound():
    system = sg.make_system("rotation2d")
    far = sg.SafetySpec(sg.Box([10.0, 10.0], [11.0, 11.0]), (0.9, 1.1))
    res = sg.falsify_rd(system, far, params=sg.RDParams(bound=5), seed=0)
    assert not res.falsified
    assert res.rho > 0
    assert res.k == 5
    assert len(res.rho_history) == 6
    assert res.simulations == 6  # seed anchor plus one per loop pass
    assert all(np.isfinite(res.rho_history))


def test_falsify_rd_trivial_spec_costs_only_resamples():
    # every initial condition already violates, so the search never starts
    system = sg.make_system("constant2d")
    everywhere = sg.SafetySpec(sg.Box([-1.0, -1.0], [3.0, 2.0]), (0.5, 1.0))
    res = sg.falsify_rd(system, everywhere, seed=0, max_resample=5)
    assert res.falsified
    assert res.k == 0
    assert res.rho < 0
    assert res.simulations == 6  # seed anchor plus the capped resamples


def test_falsify_rd_rejects_window_past_horizon():
    system = sg.make_system("rotation2d")
    spec = sg.SafetySpec(sg.Box([0.0, 0.0], [1.0, 1.0]), (0.0, 5.0))
    with pytest.raises(sg.InputError):
        sg.falsify_rd(system, spec)


def test_falsify_rd_result_dict():
    system = sg.make_system("rotation2d")
    res = sg.falsify_rd(system, ROTATION_TUBE_SPEC, seed=0)
    d = res.to_dict()
    assert d["method"] == "guided"
    assert d["falsified"] is True
    assert isinstance(d["target"], list)
    assert d["rho"] == res.rho


# ---------------------------------------------------------------------------
# annealing baseline


def test_falsify_baseline_finds_generous_box():
    system = sg.make_system("rotation2d")
    wide = sg.SafetySpec(sg.Box([1.5, -1.2], [2.9, 0.3]), (0.9, 1.1))
    res = sg.falsify_baseline(system, wide, seed=0, budget=50)
    assert res.falsified
    assert res.rho < 0
    assert res.method == "annealing"


def test_falsify_baseline_bookkeeping():
    system = sg.make_system("rotation2d")
    res = sg.falsify_baseline(system, ROTATION_TUBE_SPEC, seed=1, budget=20)
    assert res.falsified == (res.rho < 0)
    assert len(res.rho_history) == res.simulations
    if res.falsified:
        assert len(res.rho_history) == res.k + 1
    else:
        assert res.k == 20
        assert len(res.rho_history) == 21
    # every proposal stays inside the initial set
    assert system.initial_set.contains(res.x0, tol=1e-12)


def test_falsify_baseline_deterministic():
    system = sg.make_system("rotation2d")
    a = sg.falsify_baseline(system, ROTATION_TUBE_SPEC, seed=9, budget=10)
    b = sg.falsify_baseline(system, ROTATION_TUBE_SPEC, seed=9, budget=10)
    assert a.rho_history == b.rho_history
    assert np.array_equal(a.x0, b.x0)


def test_falsify_baseline_rejects_bad_budget():
    system = sg.make_system("rotation2d")
    with pytest.raises(sg.InputError):
        sg.falsify_baseline(system, ROTATION_TUBE_SPEC, budget=0)
