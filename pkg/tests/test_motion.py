import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpstream import quat
from cpstream.cloud import GaussianCloud
from cpstream.errors import NoControlPointsForCategory, NoNeighbors
from cpstream.harness import sphere_gaussians
from cpstream.motion import (
    ControlArrays,
    apply_motion,
    blend_quaternions,
    interpolate_motion,
    interpolation_weights,
    knn,
)


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def controls(positions, translations=None, rotations=None, categories=None):
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    n = len(positions)
    return ControlArrays(
        positions=positions,
        translations=np.zeros((n, 3)) if translations is None else np.asarray(translations, dtype=float).reshape(n, 3),
        rotations=np.tile(quat.IDENTITY, (n, 1)) if rotations is None else np.asarray(rotations, dtype=float).reshape(n, 4),
        categories=np.ones(n, dtype=int) if categories is None else np.asarray(categories, dtype=int),
    )


def point_cloud(positions, labels):
    n = len(positions)
    return GaussianCloud(positions, np.tile(quat.IDENTITY, (n, 1)), np.full((n, 3), 0.01), np.full(n, 0.5),
                         np.full((n, 3), 0.5), labels)


class TestEuler:
    def test_yaw_quarter_turn(self):
        np.testing.assert_allclose(quat.euler_zyx_to_quaternion([0.0, 0.0, np.pi / 2]),
                                   [np.sqrt(0.5), 0.0, 0.0, np.sqrt(0.5)], atol=1e-15)

    def test_zero(self):
        np.testing.assert_array_equal(quat.euler_zyx_to_quaternion([0.0, 0.0, 0.0]), quat.IDENTITY)

    def test_matches_composed_matrices(self):
        rng = np.random.default_rng(0)
        for ax, ay, az in rng.uniform(-np.pi, np.pi, size=(100, 3)):
            q = quat.euler_zyx_to_quaternion([ax, ay, az])
            assert abs(np.linalg.norm(q) - 1.0) < 1e-12
            np.testing.assert_allclose(quat.to_matrix(q), rot_z(az) @ rot_y(ay) @ rot_x(ax), atol=1e-9)


class TestWeights:
    def test_example(self):
        w = interpolation_weights([0.0, 0.0, 0.0], [[1.0, 0, 0], [0, 1.0, 0], [0, 0, 2.0]])
        np.testing.assert_allclose(w, [0.4, 0.4, 0.2], rtol=1e-15)

    def test_equidistant(self):
        w = interpolation_weights([0.0, 0.0, 0.0], [[1.0, 0, 0], [0, -1.0, 0], [0, 0, 1.0]])
        np.testing.assert_allclose(w, [1 / 3] * 3, rtol=1e-15)

    def test_coincident_takes_all(self):
        w = interpolation_weights([0.0, 0.0, 0.0], [[1.0, 0, 0], [0, 0, 5e-10], [0, 0, 1e-10]])
        np.testing.assert_array_equal(w, [0.0, 1.0, 0.0])

    def test_no_neighbors(self):
        with pytest.raises(NoNeighbors):
            interpolation_weights([0.0, 0.0, 0.0], np.zeros((0, 3)))

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(*[st.floats(-10, 10)] * 3), min_size=1, max_size=6),
           st.tuples(*[st.floats(-10, 10)] * 3))
    def test_convex_weights(self, neighbors, query):
        w = interpolation_weights(query, neighbors)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1.0) < 1e-12


class TestKnn:
    def test_ties_broken_by_index(self):
        pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0]])
        idx, dist = knn(pts, np.zeros(3), 3)
        np.testing.assert_array_equal(idx[0], [0, 1, 2])
        np.testing.assert_array_equal(dist[0], [1.0, 1.0, 1.0])

    def test_fewer_points_than_k(self):
        idx, _ = knn(np.array([[0.0, 0, 1], [0, 0, 2]]), np.zeros(3), 3)
        np.testing.assert_array_equal(idx[0], [0, 1])


class TestQuaternionBlend:
    def test_midpoint_nlerp_vs_slerp(self):
        q1 = quat.from_axis_angle([0, 0, 1], np.pi / 2)
        q = blend_quaternions(np.stack([quat.IDENTITY, q1]), np.array([0.5, 0.5]))
        np.testing.assert_allclose(q, [0.9238795325112867, 0.0, 0.0, 0.3826834323650898], atol=1e-15)
        np.testing.assert_allclose(q, quat.slerp(quat.IDENTITY, q1, 0.5), atol=1e-3)

    def test_hemisphere_alignment(self):
        q1 = quat.from_axis_angle([1, 0, 0], 0.3)
        q = blend_quaternions(np.stack([q1, -q1]), np.array([0.5, 0.5]))
        np.testing.assert_allclose(q, q1, atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_unit_output(self, seed):
        rng = np.random.default_rng(seed)
        qs = rng.normal(size=(3, 4))
        qs /= np.linalg.norm(qs, axis=1, keepdims=True)
        w = rng.dirichlet(np.ones(3))
        assert abs(np.linalg.norm(blend_quaternions(qs, w)) - 1.0) < 1e-12


class TestInterpolateMotion:
    def test_convexity_of_translation(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            pos = rng.normal(size=(5, 3))
            t = rng.normal(size=(5, 3))
            m = interpolate_motion(rng.normal(size=3), controls(pos, t))
            # inside the convex hull of the 3 nearest: each coordinate lies in the range of all translations
            assert np.all(m.translation <= t.max(axis=0) + 1e-12)
            assert np.all(m.translation >= t.min(axis=0) - 1e-12)

    def test_constant_field_reproduced(self):
        rng = np.random.default_rng(3)
        t = np.array([0.1, -0.2, 0.3])
        q = quat.from_axis_angle([0.0, 1.0, 0.0], 0.2)
        c = controls(rng.normal(size=(10, 3)), np.tile(t, (10, 1)), np.tile(q, (10, 1)))
        m = interpolate_motion(rng.normal(size=3), c)
        np.testing.assert_allclose(m.translation, t, atol=1e-12)
        np.testing.assert_allclose(m.rotation, q, atol=1e-12)

    def test_single_neighbor(self):
        c = controls([[1.0, 2.0, 3.0]], [[0.5, 0.0, 0.0]])
        m = interpolate_motion([0.0, 0.0, 0.0], c)
        np.testing.assert_array_equal(m.translation, [0.5, 0.0, 0.0])

    def test_missing_category(self):
        with pytest.raises(NoControlPointsForCategory):
            interpolate_motion([0.0, 0.0, 0.0], controls([[0.0, 0, 0]]), category=2)


class TestApplyMotion:
    def test_zero_motion_is_bit_exact(self):
        rng = np.random.default_rng(4)
        cloud = point_cloud(rng.normal(size=(50, 3)), rng.integers(0, 3, size=50))
        c = controls(rng.normal(size=(6, 3)), categories=[1, 1, 1, 2, 2, 2])
        out = apply_motion(cloud, c)
        for name in ("positions", "rotations", "scales", "opacities", "colors", "labels"):
            np.testing.assert_array_equal(getattr(out, name), getattr(cloud, name))

    def test_uniform_translation(self):
        rng = np.random.default_rng(5)
        cloud = point_cloud(rng.normal(size=(30, 3)), np.ones(30))
        delta = np.array([0.01, 0.02, -0.03])
        out = apply_motion(cloud, controls(rng.normal(size=(8, 3)), np.tile(delta, (8, 1))))
        np.testing.assert_allclose(out.positions, cloud.positions + delta, atol=1e-12)

    def test_rotation_about_own_center(self):
        cloud = point_cloud(np.array([[1.0, 0.0, 0.0]]), [1])
        q = quat.from_axis_angle([0.0, 0.0, 1.0], 0.5)
        out = apply_motion(cloud, controls([[0.0, 0.0, 0.0]], rotations=[q]))
        np.testing.assert_array_equal(out.positions, cloud.positions)
        np.testing.assert_allclose(out.rotations[0], q, atol=1e-15)

    def test_category_isolation(self):
        rng = np.random.default_rng(6)
        labels = np.repeat([0, 1, 2], 20)
        cloud = point_cloud(rng.normal(size=(60, 3)), labels)
        t = np.zeros((6, 3))
        t[3:] = [0.0, 0.0, 1.0]
        out = apply_motion(cloud, controls(rng.normal(size=(6, 3)), t, categories=[1, 1, 1, 2, 2, 2]))
        np.testing.assert_array_equal(out.positions[labels != 2], cloud.positions[labels != 2])
        np.testing.assert_allclose(out.positions[labels == 2], cloud.positions[labels == 2] + [0, 0, 1.0])

    def test_missing_category_raises(self):
        cloud = point_cloud(np.zeros((2, 3)), [1, 2])
        with pytest.raises(NoControlPointsForCategory):
            apply_motion(cloud, controls([[0.0, 0, 0]]))

    def test_dense_rigid_oracle(self):
        rng = np.random.default_rng(7)
        center = np.array([0.0, 0.0, 0.0])
        gaussians = sphere_gaussians(center, 0.3, 1000, 1, rng)
        axis = rng.normal(size=3)
        q = quat.from_rotvec(0.05 * axis / np.linalg.norm(axis))
        r = quat.to_matrix(q)
        shift = np.array([0.02, -0.01, 0.015])
        anchors = sphere_gaussians(center, 0.3, 300, 1, rng).positions
        moved = (anchors - center) @ r.T + center + shift
        c = controls(anchors, moved - anchors, np.tile(q, (300, 1)))
        out = apply_motion(gaussians, c)
        expected = (gaussians.positions - center) @ r.T + center + shift
        err = np.linalg.norm(out.positions - expected, axis=1).mean()
        assert err < 0.01 * 0.6
