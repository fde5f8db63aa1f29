import math

from hypothesis import given, strategies as st

from meshslam.geometry import Pose2, back_project, range_bearing, wrap_angle

angles = st.floats(-50.0, 50.0, allow_nan=False)
coords = st.floats(-100.0, 100.0, allow_nan=False)
poses = st.builds(lambda x, y, t: Pose2(x, y, wrap_angle(t)), coords, coords, angles)


@given(angles)
def test_wrap_angle_range(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    # wrapping preserves the angle modulo a full turn
    assert math.isclose(math.cos(w), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(w), math.sin(theta), abs_tol=1e-9)


@given(poses)
def test_compose_identity(p):
    q = p.compose(Pose2())
    assert math.isclose(q.x, p.x, abs_tol=1e-12)
    assert math.isclose(q.y, p.y, abs_tol=1e-12)
    assert math.isclose(q.theta, p.theta, abs_tol=1e-12)


@given(poses)
def test_inverse_cancels(p):
    q = p.compose(p.inverse())
    assert abs(q.x) < 1e-9 and abs(q.y) < 1e-9 and abs(q.theta) < 1e-9


@given(poses, poses)
def test_relative_roundtrip(a, b):
    rel = b.relative_to(a)
    q = a.compose(rel)
    assert math.isclose(q.x, b.x, abs_tol=1e-9)
    assert math.isclose(q.y, b.y, abs_tol=1e-9)
    assert abs(wrap_angle(q.theta - b.theta)) < 1e-9


@given(poses, st.floats(0.1, 60.0), st.floats(-3.1, 3.1))
def test_range_bearing_back_project_roundtrip(pose, rng, bearing):
    lx, ly = back_project(pose, rng, bearing)
    r2, b2 = range_bearing(pose, lx, ly)
    assert math.isclose(r2, rng, rel_tol=1e-9, abs_tol=1e-9)
    assert abs(wrap_angle(b2 - bearing)) < 1e-9


def test_theta_normalized_after_composition():
    p = Pose2(0, 0, 3.0).compose(Pose2(0, 0, 3.0))
    assert -math.pi < p.theta <= math.pi
