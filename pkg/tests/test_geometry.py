import numpy as np
import pytest

from src.geometry import (
    K0,
    FrameTransform,
    angle_between,
    euler_from_rotation,
    exp_so3,
    gravity_vector,
    integrate_rotation,
    is_rotation,
    log_so3,
    orthonormality_error,
    quaternion_from_rotation,
    quaternions_from_rotations,
    rotation_from_euler,
    rotation_from_quaternion,
    rotations_from_quaternions,
    skew,
    tilt_error,
    vex,
)
from src.models import ConfigurationError, FrameTag


class TestRotationAlgebra:
    """Tests for skew, exp and log maps."""

    def test_skew_matches_cross_product(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            v, w = rng.normal(size=3), rng.normal(size=3)
            np.testing.assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-15)
            np.testing.assert_allclose(vex(skew(v)), v, atol=1e-15)

    def test_exp_log_roundtrip(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            phi = axis * rng.uniform(0.0, np.pi - 1e-3)
            r = exp_so3(phi)
            assert is_rotation(r, 1e-12)
            np.testing.assert_allclose(log_so3(r), phi, atol=1e-9)

    def test_exp_small_angle(self):
        r = exp_so3([1e-9, 0.0, 0.0])
        assert is_rotation(r)
        np.testing.assert_allclose(log_so3(r), [1e-9, 0.0, 0.0], atol=1e-15)

    def test_log_near_pi(self):
        phi = np.array([0.0, 0.0, np.pi - 1e-8])
        out = log_so3(exp_so3(phi))
        assert abs(np.linalg.norm(out) - np.linalg.norm(phi)) < 1e-6
        assert abs(abs(out[2]) - np.linalg.norm(phi)) < 1e-6

    def test_gravity_points_down(self):
        np.testing.assert_allclose(gravity_vector(), [0.0, 0.0, 9.80665])


class TestIntegrateRotation:
    """Tests for the attitude kinematics step."""

    def test_constant_rate_matches_closed_form(self):
        omega = np.array([0.1, -0.2, 0.3])
        r = np.eye(3)
        for _ in range(1000):
            r = integrate_rotation(r, omega, 0.01)
        np.testing.assert_allclose(r, exp_so3(omega * 10.0), atol=1e-9)

    def test_stays_orthonormal_over_long_runs(self):
        rng = np.random.default_rng(3)
        r = np.eye(3)
        for _ in range(20000):
            r = integrate_rotation(r, rng.normal(size=3), 0.0025)
        assert orthonormality_error(r) <= 1e-9
        assert abs(np.linalg.det(r) - 1.0) <= 1e-9

    def test_rejects_nonpositive_dt(self):
        with pytest.raises(ConfigurationError):
            integrate_rotation(np.eye(3), [0.0, 0.0, 1.0], 0.0)


class TestParameterizations:
    """Tests for Euler angles and quaternions."""

    def test_euler_roundtrip(self):
        angles = np.array([0.3, -0.4, 2.0])
        np.testing.assert_allclose(euler_from_rotation(rotation_from_euler(*angles)), angles, atol=1e-12)

    def test_quaternion_roundtrip_and_sign(self):
        rng = np.random.default_rng(4)
        for _ in range(30):
            r = exp_so3(rng.normal(size=3))
            q = quaternion_from_rotation(r)
            assert q[0] >= 0
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12
            np.testing.assert_allclose(rotation_from_quaternion(q), r, atol=1e-12)

    def test_batch_conversions_match_single(self):
        rng = np.random.default_rng(5)
        rs = np.array([exp_so3(rng.normal(size=3)) for _ in range(10)])
        qs = quaternions_from_rotations(rs)
        assert qs.shape == (10, 4)
        np.testing.assert_allclose(rotations_from_quaternions(qs), rs, atol=1e-12)

    def test_angles_between_rotations(self):
        r = rotation_from_euler(0.0, 0.0, 0.5)
        assert angle_between(np.eye(3), r) == pytest.approx(0.5)
        # Pure yaw does not tilt the down axis.
        assert tilt_error(np.eye(3), r) == pytest.approx(0.0, abs=1e-12)
        assert tilt_error(np.eye(3), rotation_from_euler(0.2, 0.0, 0.0)) == pytest.approx(0.2)


class TestFrameTransform:
    """Tests for frame-tagged rotations."""

    def test_apply_and_inverse(self):
        tf = FrameTransform(FrameTag.BODY, FrameTag.INERTIAL_NED, rotation_from_euler(0.0, 0.0, np.pi / 2))
        v = tf.apply([1.0, 0.0, 0.0], FrameTag.BODY)
        np.testing.assert_allclose(v, [0.0, 1.0, 0.0], atol=1e-15)
        np.testing.assert_allclose(tf.inverse().apply(v, FrameTag.INERTIAL_NED), [1.0, 0.0, 0.0], atol=1e-15)

    def test_wrong_frame_rejected(self):
        tf = FrameTransform(FrameTag.BODY, FrameTag.INERTIAL_NED, np.eye(3))
        with pytest.raises(ConfigurationError):
            tf.apply(K0, FrameTag.INERTIAL_NED)

    def test_non_rotation_rejected(self):
        with pytest.raises(ConfigurationError):
            FrameTransform(FrameTag.SENSOR, FrameTag.BODY, np.diag([1.0, 1.0, 2.0]))
