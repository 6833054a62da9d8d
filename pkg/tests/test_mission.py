import math

import numpy as np
import pytest

from vtcoord.mission import (
    BoundsError,
    Circle,
    Composite,
    GammaBounds,
    Line,
    PhysicalBounds,
    concentric_circles,
    derive_gamma_bounds,
    eval_trajectory,
    min_pairwise_distance,
    min_pairwise_separation,
    speed_range,
    trajectory_from_json,
)


def test_circle_derivatives_match_finite_differences():
    c = Circle((1.0, -2.0, 0.5), 3.0, 0.4, 50.0, phase=0.3, z_amplitude=0.7, z_omega=1.3)
    eps = 1e-5
    for g in (0.5, 7.0, 21.3):
        p_plus = eval_trajectory(c, g + eps)[0]
        p_minus = eval_trajectory(c, g - eps)[0]
        v_plus = eval_trajectory(c, g + eps)[1]
        v_minus = eval_trajectory(c, g - eps)[1]
        _, v, a = eval_trajectory(c, g)
        np.testing.assert_allclose(v, (p_plus - p_minus) / (2 * eps), atol=1e-8)
        np.testing.assert_allclose(a, (v_plus - v_minus) / (2 * eps), atol=1e-8)


def test_circle_speed_is_radius_times_rate():
    c = Circle((0, 0, 0), 4.0, 0.25, 100.0)
    lo, hi, acc = speed_range(c, 101)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    assert acc == pytest.approx(4.0 * 0.25 ** 2)


def test_clamping_outside_mission():
    line = Line((0, 0, 0), (10, 0, 0), 10.0)
    np.testing.assert_array_equal(eval_trajectory(line, -3.0)[0], [0, 0, 0])
    np.testing.assert_array_equal(eval_trajectory(line, 12.0)[0], [10, 0, 0])


def test_composite_is_continuous_at_joints():
    comp = trajectory_from_json({"kind": "composite", "segments": [
        {"kind": "line", "start": [0, 0, 0], "end": [5, 0, 0], "duration": 5},
        {"kind": "line", "start": [5, 0, 0], "end": [5, 4, 0], "duration": 2},
    ]})
    assert isinstance(comp, Composite) and comp.duration == 7.0
    assert comp.joints() == [5.0]
    np.testing.assert_allclose(eval_trajectory(comp, 5.0 - 1e-12)[0], eval_trajectory(comp, 5.0)[0], atol=1e-10)
    np.testing.assert_allclose(eval_trajectory(comp, 6.0)[0], [5, 2, 0])
    np.testing.assert_allclose(eval_trajectory(comp, 6.0)[1], [0, 2, 0])


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown trajectory kind"):
        trajectory_from_json({"kind": "spline"})


def test_concentric_circles_share_speed():
    trajs = concentric_circles(4, (0, 0, 0), 4.0, 1.5, 2.0, 70.0)
    for i, c in enumerate(trajs):
        assert c.radius == 4.0 + 1.5 * i
        lo, hi, _ = speed_range(c, 51)
        assert lo == pytest.approx(2.0) and hi == pytest.approx(2.0)
    phases = [c.phase for c in trajs]
    np.testing.assert_allclose(np.diff(phases), math.pi / 2)


def test_derived_gamma_bounds_example():
    pb = PhysicalBounds(v_min=0.5, v_max=3.0, a_max=4.0, v_d_min=1.0, v_d_max=1.5, a_d_max=0.5)
    gb = derive_gamma_bounds(pb)
    assert gb.rate_min == pytest.approx(0.5)
    assert gb.rate_max == pytest.approx(2.0)
    assert gb.accel_max == pytest.approx((4.0 - 4.0 * 0.5) / 1.5)
    # the derived limits exactly exhaust the acceleration budget
    assert gb.accel_limit_slack(pb) == pytest.approx(0.0, abs=1e-12)
    assert gb.delta_rate_min == pytest.approx(-0.5) and gb.delta_rate_max == pytest.approx(1.0)


def test_inconsistent_physical_bounds():
    with pytest.raises(BoundsError):
        PhysicalBounds(v_min=1.0, v_max=3.0, a_max=4.0, v_d_min=0.5, v_d_max=1.5, a_d_max=0.5)
    with pytest.raises(BoundsError):
        PhysicalBounds(v_min=0.1, v_max=3.0, a_max=0.4, v_d_min=0.5, v_d_max=1.5, a_d_max=0.5)
    with pytest.raises(BoundsError, match="acceleration limit"):
        derive_gamma_bounds(PhysicalBounds(0.1, 3.0, 2.0, 0.5, 1.0, 0.3))


def test_gamma_bounds_must_bracket_nominal_pace():
    with pytest.raises(BoundsError):
        GammaBounds(1.1, 2.0, 1.0)
    with pytest.raises(BoundsError):
        GammaBounds(0.0, 2.0, 0.0)
    with pytest.raises(BoundsError):
        GammaBounds(1.0, 1.0, 1.0)


def test_pairwise_distances():
    assert min_pairwise_distance(np.zeros((1, 3))) == math.inf
    pts = np.array([[0, 0, 0], [3, 4, 0], [0, 0, 1.5]])
    assert min_pairwise_distance(pts) == pytest.approx(1.5)
    lines = [Line((0, 0, 0), (10, 0, 0), 10.0), Line((0, 1, 0), (10, 1, 0), 10.0)]
    assert min_pairwise_separation(lines, [2.0, 2.0]) == pytest.approx(1.0)
    assert min_pairwise_separation(lines, [2.0, 5.0]) == pytest.approx(math.hypot(3.0, 1.0))
