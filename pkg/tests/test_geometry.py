import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semmap.errors import BehindCamera, InvalidDepth
from semmap.geometry import (CAMERA_TO_ROBOT_ROTATION, CameraModel, RigidTransform3, RobotPose2D, apply_transform,
                             back_project, camera_mount, camera_pose_in_map, compose, normalize_angle,
                             object_to_map, project_point, rot_x, rot_y, rot_z)

angles = st.floats(-math.pi, math.pi, allow_nan=False)
coords = st.floats(-10, 10, allow_nan=False)


@st.composite
def transforms(draw):
    r = rot_z(draw(angles)) @ rot_y(draw(angles)) @ rot_x(draw(angles))
    return RigidTransform3(r, np.array([draw(coords), draw(coords), draw(coords)]))


def test_default_camera_intrinsics():
    cam = CameraModel()
    assert cam.fx == 320.0
    # 58 degree vertical field of view over 480 rows
    assert cam.fy == pytest.approx(432.97, abs=0.01)
    assert (cam.cx, cam.cy) == (320.0, 240.0)
    assert np.allclose(cam.K, [[320, 0, 320], [0, cam.fy, 240], [0, 0, 1]])


def test_camera_from_fov_matches_defaults():
    cam = CameraModel.from_fov(640, 480, 90.0, 58.0)
    assert cam.fx == pytest.approx(320.0)
    assert cam.fy == pytest.approx(CameraModel().fy)


@pytest.mark.parametrize("kw", [dict(width=0), dict(fx=-1.0), dict(cx=700.0), dict(depth_min=9.0)])
def test_camera_rejects_invalid_parameters(kw):
    with pytest.raises(ValueError):
        CameraModel(**kw)


def test_back_project_optical_centre(cam):
    assert np.array_equal(back_project((cam.cx, cam.cy), 2.0, cam), [0.0, 0.0, 2.0])


def test_back_project_off_axis(cam):
    # (480 - 320) / 320 * 2
    assert np.allclose(back_project((480, 240), 2.0, cam), [1.0, 0.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("depth", [0.0, 0.1, 8.5, float("nan"), float("inf")])
def test_back_project_rejects_depth_outside_range(cam, depth):
    with pytest.raises(InvalidDepth):
        back_project((0, 0), depth, cam)


def test_back_project_rejects_pixel_outside_image(cam):
    with pytest.raises(ValueError):
        back_project((640.5, 10), 1.0, cam)


def test_project_point_centre_and_behind(cam):
    assert np.array_equal(project_point((0, 0, 2.0), cam), [cam.cx, cam.cy])
    with pytest.raises(BehindCamera):
        project_point((1, 1, -0.5), cam)
    with pytest.raises(BehindCamera):
        project_point((1, 1, 0.0), cam)


@settings(max_examples=300)
@given(u=st.floats(0, 639), v=st.floats(0, 479), d=st.floats(0.2, 8.0))
def test_projection_round_trip(u, v, d):
    cam = CameraModel()
    px = project_point(back_project((u, v), d, cam), cam)
    assert abs(px[0] - u) <= 1e-9 and abs(px[1] - v) <= 1e-9


def test_apply_transform_examples():
    p = np.array([1.0, 2.0, 3.0])
    assert np.array_equal(apply_transform(RigidTransform3.identity(), p), p)
    assert np.array_equal(apply_transform(RigidTransform3(np.eye(3), [0, 0, 5]), p), [1, 2, 8])
    yawed = apply_transform(RigidTransform3(rot_z(math.pi / 2)), [1.0, 0.0, 0.0])
    assert np.allclose(yawed, [0, 1, 0], atol=1e-12)


def test_apply_transform_batch_matches_single():
    T = RigidTransform3(rot_z(0.3) @ rot_x(1.1), [0.5, -2, 1])
    pts = np.random.default_rng(0).normal(size=(20, 3))
    batch = apply_transform(T, pts)
    for p, q in zip(pts, batch):
        assert np.allclose(apply_transform(T, p), q, atol=1e-14)


def test_compose_examples():
    B = RigidTransform3(rot_y(0.4), [1, 2, 3])
    assert compose(RigidTransform3.identity(), B) == B
    ident = compose(B, B.inverse())
    assert np.allclose(ident.matrix(), np.eye(4), atol=1e-9)
    t = compose(RigidTransform3(translation=[1, 0, 0]), RigidTransform3(translation=[0, 2, 0]))
    assert np.array_equal(t.translation, [1, 2, 0])


@given(transforms(), transforms(), transforms())
def test_compose_is_associative(a, b, c):
    lhs = compose(compose(a, b), c).matrix()
    rhs = compose(a, compose(b, c)).matrix()
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(transforms())
def test_inverse_composes_to_identity(a):
    assert np.allclose(compose(a.inverse(), a).matrix(), np.eye(4), atol=1e-9)


@given(transforms(), st.lists(transforms(), min_size=1, max_size=50))
def test_composition_stays_orthonormal(a, chain):
    T = a
    for b in chain:
        T = compose(T, b)
    r = T.rotation
    assert np.abs(r.T @ r - np.eye(3)).max() <= 1e-9
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_compose_repairs_drifted_rotation():
    drift = rot_z(0.2) * (1 + 1e-7)
    # bypass validation to simulate accumulated round-off
    A = RigidTransform3.identity()
    object.__setattr__(A, "rotation", drift)
    out = compose(A, RigidTransform3.identity())
    assert np.abs(out.rotation.T @ out.rotation - np.eye(3)).max() <= 1e-12


def test_transform_matrix_round_trip_and_equality():
    T = RigidTransform3(rot_x(0.3), [1, 2, 3])
    assert RigidTransform3.from_matrix(T.matrix()) == T
    assert hash(RigidTransform3.from_matrix(T.matrix())) == hash(T)
    with pytest.raises(ValueError):
        RigidTransform3(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        T.rotation[0, 0] = 5.0


@pytest.mark.parametrize("theta,expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
                                            (3 * math.pi, math.pi), (2 * math.pi + 0.5, 0.5), (-0.5, -0.5)])
def test_normalize_angle(theta, expected):
    assert normalize_angle(theta) == pytest.approx(expected, abs=1e-12)


def test_camera_axes_in_robot_frame():
    R = CAMERA_TO_ROBOT_ROTATION
    assert np.array_equal(R @ [0, 0, 1], [1, 0, 0])     # optical axis forward
    assert np.array_equal(R @ [1, 0, 0], [0, -1, 0])    # image right is robot right
    assert np.array_equal(R @ [0, 1, 0], [0, 0, -1])    # image down is robot down
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_object_to_map_identity_pose():
    mount = camera_mount(height=0.0)
    p_o = np.array([0.0, 0.0, 3.0])
    assert np.allclose(object_to_map(p_o, RobotPose2D(0, 0, 0), mount), [3, 0, 0])


def test_object_to_map_translated_pose():
    h = 0.3
    out = object_to_map([0.0, 0.0, 3.0], RobotPose2D(1, 2, 0), camera_mount(height=h))
    assert np.allclose(out, [4, 2, h], atol=1e-12)


def test_object_to_map_rotated_pose():
    h = 0.3
    out = object_to_map([0.0, 0.0, 3.0], RobotPose2D(0, 0, math.pi / 2), camera_mount(height=h))
    assert np.allclose(out, [0, 3, h], atol=1e-9)


@given(coords, coords, angles, coords, coords, st.floats(0.2, 8))
def test_object_to_map_is_the_composed_transform(x, y, th, px, py, pz):
    pose = RobotPose2D(x, y, th)
    mount = camera_mount(height=0.3, forward=0.1, pitch=0.2)
    p = np.array([px, py, pz])
    expected = apply_transform(compose(pose.as_transform(), mount), p)
    assert np.array_equal(object_to_map(p, pose, mount), expected)
    assert np.array_equal(expected, apply_transform(camera_pose_in_map(pose, mount), p))


def test_camera_pitch_tilts_optical_axis_down():
    mount = camera_mount(height=1.0, pitch=math.radians(30))
    ahead = apply_transform(mount, [0, 0, 1.0])
    assert ahead[0] == pytest.approx(math.cos(math.radians(30)))
    assert ahead[2] == pytest.approx(1.0 - math.sin(math.radians(30)))
