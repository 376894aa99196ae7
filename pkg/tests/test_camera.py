import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mipsplat.camera import (Camera, in_frustum, project_covariance, projection_jacobian,
                             world_to_camera)
from mipsplat.errors import BehindCameraError, InvalidParameterError
from mipsplat.gaussians import compose_covariance, quaternion_to_rotation


def _cam(rot=np.eye(3), t=(0.0, 0.0, 0.0), f=100.0, w=64, h=48):
    return Camera(np.asarray(rot, dtype=float), np.asarray(t, dtype=float), f, f, w, h)


def _rand_rot(rng):
    return quaternion_to_rotation(rng.normal(size=4))


def test_camera_validation():
    with pytest.raises(InvalidParameterError):
        _cam(rot=np.diag([1.0, 1.0, 1.01]))
    with pytest.raises(InvalidParameterError):
        _cam(f=0.0)
    with pytest.raises(InvalidParameterError):
        _cam(w=0)
    np.testing.assert_array_equal(_cam().principal_point, [32.0, 24.0])


def test_world_to_camera_identity_and_flip():
    sigma = np.diag([1.0, 2.0, 3.0])
    p, s = world_to_camera(_cam(t=(0, 0, 5)), np.zeros(3), sigma)
    np.testing.assert_allclose(p, [0, 0, 5])
    np.testing.assert_allclose(s, sigma)
    flip_y = np.diag([-1.0, 1.0, -1.0])
    p, _ = world_to_camera(_cam(rot=flip_y), np.array([1.0, 0, 0]), sigma)
    np.testing.assert_allclose(p, [-1, 0, 0])


def test_world_to_camera_similarity_invariants():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sigma = compose_covariance(rng.normal(size=4), rng.normal(size=3))
        cam = _cam(rot=_rand_rot(rng), t=rng.normal(size=3))
        _, s = world_to_camera(cam, rng.normal(size=3), sigma)
        assert np.trace(s) == pytest.approx(np.trace(sigma), rel=1e-12)
        assert np.linalg.det(s) == pytest.approx(np.linalg.det(sigma), rel=1e-9)


def test_jacobian_examples():
    np.testing.assert_allclose(projection_jacobian(_cam(), np.array([0, 0, 2.0])), [[50, 0, 0], [0, 50, 0]])
    np.testing.assert_allclose(projection_jacobian(_cam(), np.array([1.0, 0, 1.0]))[0], [100, 0, -100])


def test_jacobian_behind_camera_raises():
    with pytest.raises(BehindCameraError):
        projection_jacobian(_cam(), np.array([0, 0, 0.1]))


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    cam = Camera(np.eye(3), np.zeros(3), 120.0, 90.0, 64, 48)
    h = 1e-6
    for z in np.geomspace(0.5, 100, 40):
        pc = np.array([*rng.uniform(-z, z, 2), z])
        fd = np.empty((2, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h * max(1.0, abs(pc[j]))
            fd[:, j] = (cam.project_camera_space(pc + e) - cam.project_camera_space(pc - e)) / (2 * e[j])
        jac = projection_jacobian(cam, pc)
        np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-5 * np.abs(jac).max())


def test_project_covariance_examples():
    j = np.array([[1.0, 0, 0], [0, 1.0, 0]])
    np.testing.assert_allclose(project_covariance(j, np.diag([2.0, 3.0, 4.0])), np.diag([2.0, 3.0]))
    rng = np.random.default_rng(2)
    sigma = compose_covariance(rng.normal(size=4), rng.normal(size=3))
    j2 = np.array([[3.0, 1.0, 0.0], [0.5, 2.0, 0.0]])
    other = sigma.copy()
    other[2, :] = other[:, 2] = 7.0
    np.testing.assert_allclose(project_covariance(j2, sigma), project_covariance(j2, other))


def test_project_covariance_two_path_equivalence():
    rng = np.random.default_rng(3)
    for _ in range(20):
        sigma = compose_covariance(rng.normal(size=4), rng.normal(size=3))
        j = rng.normal(size=(2, 3))
        full = np.vstack([j, rng.normal(size=(1, 3))])
        np.testing.assert_allclose(project_covariance(j, sigma), (full @ sigma @ full.T)[:2, :2], rtol=1e-12)
        out = project_covariance(j, sigma)
        assert np.array_equal(out, out.T)
        assert np.all(np.linalg.eigvalsh(out) >= -1e-12)


def test_in_frustum_examples():
    cam = _cam()
    assert in_frustum(cam, np.array([0, 0, 2.0]))
    assert not in_frustum(cam, np.array([0, 0, -1.0]))
    # pixel (-10, -10): u = f x / z + cx
    z = 2.0
    p = np.array([(-10 - 32) * z / 100, (-10 - 24) * z / 100, z])
    assert in_frustum(cam, p, padding=16)
    assert not in_frustum(cam, p, padding=0)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-2, 10), st.floats(0, 50), st.floats(0, 50))
def test_in_frustum_monotone_in_padding(x, y, z, pad_a, pad_b):
    lo, hi = sorted((pad_a, pad_b))
    p = np.array([x, y, z])
    cam = _cam()
    assert not (in_frustum(cam, p, lo) and not in_frustum(cam, p, hi))


def test_look_at_centers_target():
    cam = Camera.look_at([3.0, 1.0, -2.0], [0.5, 0.0, 0.2], focal=80, width=40, height=30)
    np.testing.assert_allclose(cam.center, [3.0, 1.0, -2.0], atol=1e-12)
    np.testing.assert_allclose(cam.project(np.array([0.5, 0.0, 0.2])), [20.0, 15.0], atol=1e-9)


def test_scaled_camera_scales_pixel_coordinates():
    rng = np.random.default_rng(4)
    cam = _cam(rot=_rand_rot(rng), t=(0.1, 0.2, 6.0))
    p = rng.normal(size=(5, 3))
    for s in (0.25, 0.5, 2.0, 4.0):
        z = cam.scaled(s)
        assert (z.width, z.height) == (round(64 * s), round(48 * s))
        np.testing.assert_allclose(z.project(p), s * cam.project(p), rtol=1e-12)


def test_moved_along_axis_keeps_orientation():
    cam = Camera.look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], focal=50, width=32, height=32)
    near = cam.moved_along_axis(2.0)
    np.testing.assert_allclose(near.center, [0, 0, -2.0], atol=1e-12)
    np.testing.assert_array_equal(near.rotation, cam.rotation)
