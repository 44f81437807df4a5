import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgbdfusion.errors import InvalidRotation, NonPositiveDepth
from rgbdfusion.geometry import (Intrinsics, Pose, apply, backproject, compose, invert, orthonormalize, project,
                                 project_points, rotation_angle)

from conftest import random_pose

INTR = Intrinsics()


def close_pose(a, b, tol):
    return np.abs(a.rotation - b.rotation).max() <= tol and np.abs(a.translation - b.translation).max() <= tol


def test_compose_identity():
    I = Pose.identity()
    assert close_pose(compose(I, I), I, 0)


def test_compose_inverse_is_identity(rng):
    for _ in range(50):
        p = random_pose(rng, max_t=5)
        assert close_pose(compose(p, invert(p)), Pose.identity(), 1e-9)
        assert close_pose(compose(invert(p), p), Pose.identity(), 1e-9)


def test_compose_order_applies_b_first():
    a = Pose(translation=(1, 0, 0))
    b = Pose.from_rotvec((0, 0, math.pi / 2))
    # b rotates (1,0,0) to (0,1,0), then a shifts by x
    assert np.allclose(apply(compose(a, b), (1, 0, 0)), (1, 1, 0), atol=1e-12)


def test_compose_chain_matches_extended_precision(rng):
    mpmath.mp.dps = 40
    poses = [random_pose(rng, max_angle=0.05, max_t=0.05) for _ in range(100)]
    acc = Pose.identity()
    for p in poses:
        acc = compose(acc, p)
    M = mpmath.eye(4)
    for p in poses:
        M = M * mpmath.matrix(p.as_matrix().tolist())
    ref = np.array([[float(M[i, j]) for j in range(4)] for i in range(4)])
    assert np.abs(acc.as_matrix() - ref).max() < 1e-9


def test_compose_associative(rng):
    for _ in range(50):
        a, b, c = (random_pose(rng, max_t=3) for _ in range(3))
        assert close_pose(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)


def test_invert_examples(rng):
    assert close_pose(invert(Pose.identity()), Pose.identity(), 0)
    assert np.array_equal(invert(Pose(translation=(1, 0, 0))).translation, [-1, 0, 0])
    for _ in range(50):
        p = random_pose(rng, max_t=10)
        assert close_pose(invert(invert(p)), p, 1e-12)
        q = invert(p)
        assert np.allclose(q.rotation, p.rotation.T, atol=0)
        assert np.allclose(q.translation, -p.rotation.T @ p.translation, atol=1e-15)


def test_apply_examples(rng):
    assert np.array_equal(apply(Pose.identity(), (1, 2, 3)), [1, 2, 3])
    rz = Pose.from_rotvec((0, 0, math.pi / 2))
    assert np.abs(apply(rz, (1, 0, 0)) - [0, 1, 0]).max() < 1e-12
    for _ in range(100):
        p = random_pose(rng, max_t=5)
        a, b = rng.normal(size=3), rng.normal(size=3)
        assert abs(np.linalg.norm(apply(p, a) - apply(p, b)) - np.linalg.norm(a - b)) < 1e-9


def test_apply_batched_matches_single(rng):
    p = random_pose(rng)
    pts = rng.normal(size=(20, 3))
    batch = apply(p, pts)
    for i in range(20):
        assert np.allclose(batch[i], p.rotation @ pts[i] + p.translation, atol=1e-14)


def test_pose_rejects_reflection_and_nonorthonormal():
    with pytest.raises(InvalidRotation):
        Pose(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(InvalidRotation):
        Pose(np.eye(3) * 1.001)
    with pytest.raises(InvalidRotation):
        Pose(np.eye(3), (np.nan, 0, 0))


def test_orthonormalize_is_nearest_rotation(rng):
    R = random_pose(rng).rotation
    noisy = R + rng.normal(scale=1e-4, size=(3, 3))
    Q = orthonormalize(noisy)
    assert np.abs(Q.T @ Q - np.eye(3)).max() < 1e-12
    assert np.linalg.det(Q) > 0
    assert np.abs(Q - R).max() < 1e-3
    Pose.from_matrix(np.block([[noisy, np.zeros((3, 1))], [np.zeros((1, 3)), 1]]), orthonormalize_rotation=True)


def test_compose_reorthonormalizes_drift(rng):
    p = random_pose(rng)
    acc = Pose.identity()
    for _ in range(10000):
        acc = compose(acc, p)
    assert np.abs(acc.rotation.T @ acc.rotation - np.eye(3)).max() <= 1e-9


def test_rotation_angle_small_and_large():
    for a in (0.0, 1e-9, 1e-4, 0.5, 3.0, math.pi):
        R = Pose.from_rotvec((0, a, 0)).rotation
        assert abs(rotation_angle(R) - a) < 1e-12


def test_backproject_examples():
    assert np.array_equal(backproject(INTR.cx, INTR.cy, 1.0, INTR), [0, 0, 1.0])
    assert np.allclose(backproject(INTR.cx + INTR.fx, INTR.cy, 2.0, INTR), [2.0, 0, 2.0], atol=1e-15)
    for d in (0.0, -1.0):
        with pytest.raises(NonPositiveDepth):
            backproject(10, 10, d, INTR)


def test_project_examples():
    assert project((0, 0, 1), INTR) == (INTR.cx, INTR.cy)
    assert project((0, 0, -1), INTR) is None
    assert project((0, 0, 0), INTR) is None
    assert project((100, 0, 1), INTR) is None


def test_project_backproject_roundtrip_1000(rng):
    u = rng.uniform(0, INTR.width - 1, 1000)
    v = rng.uniform(0, INTR.height - 1, 1000)
    d = rng.uniform(0.3, 8.0, 1000)
    pts = np.array([backproject(a, b, c, INTR) for a, b, c in zip(u, v, d)])
    uv, ok = project_points(pts, INTR)
    assert ok.all()
    assert np.abs(uv - np.c_[u, v]).max() < 1e-9
    for k in range(0, 1000, 97):
        assert np.abs(np.array(project(pts[k], INTR)) - [u[k], v[k]]).max() < 1e-9


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(fx=0)
    with pytest.raises(ValueError):
        Intrinsics(cx=640)
    with pytest.raises(ValueError):
        Intrinsics(depth_scale=0)
    d = INTR.downsampled(2)
    assert (d.width, d.height, d.fx, d.cx) == (320, 240, 262.5, 159.75)


def test_quaternion_roundtrip(rng):
    for _ in range(50):
        p = random_pose(rng)
        q = p.as_quaternion()
        assert q[3] >= 0 and abs(np.linalg.norm(q) - 1) < 1e-12
        assert close_pose(Pose.from_quaternion(q, p.translation), p, 1e-12)


def test_look_at_points_camera_at_target():
    p = Pose.look_at((1.0, 0.5, -2.0), (0.0, 0.0, 0.0))
    cam = apply(invert(p), (0.0, 0.0, 0.0))
    assert abs(cam[0]) < 1e-12 and abs(cam[1]) < 1e-12 and cam[2] > 0


angles = st.floats(-3.0, 3.0, allow_nan=False)
coords = st.floats(-10, 10, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.tuples(angles, angles, angles), st.tuples(coords, coords, coords), st.tuples(coords, coords, coords))
def test_property_isometry_and_inverse(rv, t, x):
    p = Pose.from_rotvec(rv, t)
    y = apply(p, x)
    assert np.allclose(apply(invert(p), y), x, atol=1e-9)
    assert abs(np.linalg.det(p.rotation) - 1) < 1e-9
