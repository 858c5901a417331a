import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from guider.errors import ConfigError, GeometryError, InputError, ProjectionError
from guider.scene_geometry import (
    Box3D,
    CameraIntrinsics,
    PointCloud,
    RigidTransform,
    canonicalize_normals,
    cluster_objects,
    cluster_prompts,
    estimate_normals,
    fit_plane_ransac,
    merge_scan,
    project_centroid,
    reproject_depth,
    rotation_from_rpy,
    transform_and_band_filter,
    voxel_downsample,
)

INTR = CameraIntrinsics(120.0, 120.0, 40.0, 30.0, 80, 60)
angles = st.floats(-math.pi, math.pi)


def test_intrinsics_validation():
    with pytest.raises(ConfigError):
        CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)
    with pytest.raises(ConfigError):
        CameraIntrinsics(1.0, 1.0, 9.0, 1.0, 4, 4)


def test_scaled_intrinsics_keep_pixel_centres():
    half = INTR.scaled(0.5)
    assert (half.width, half.height) == (40, 30)
    assert half.cx == pytest.approx((40 + 0.5) * 0.5 - 0.5)


def test_reproject_then_project_round_trip():
    rng = np.random.default_rng(0)
    depth = rng.uniform(0.4, 2.0, (60, 80))
    depth[5, 7] = 0.0
    depth[6, 8] = np.nan
    cloud, pix = reproject_depth(depth, INTR, return_pixels=True)
    assert len(cloud) == 60 * 80 - 2
    for p, (u, v) in zip(cloud.points[::97], pix[::97]):
        assert project_centroid(p, INTR) == pytest.approx((u, v), abs=1e-9)
    with pytest.raises(InputError):
        reproject_depth(depth[:10], INTR)


def test_project_behind_camera():
    with pytest.raises(ProjectionError):
        project_centroid((0.1, 0.1, 0.0), INTR)


@given(angles, angles, angles, st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_transform_inverse_and_compose(r, p, y, t):
    T = RigidTransform(rotation_from_rpy(r, p, y), t)
    pts = np.random.default_rng(1).normal(size=(20, 3))
    np.testing.assert_allclose(T.inverse().apply(T.apply(pts)), pts, atol=1e-9)
    U = RigidTransform(rotation_from_rpy(y, r, p), [0.1, 0.2, 0.3])
    np.testing.assert_allclose(T.compose(U).apply(pts), T.apply(U.apply(pts)), atol=1e-9)


def test_transform_rejects_reflection():
    with pytest.raises(ConfigError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))


def test_band_filter_uses_camera_depth():
    cloud = PointCloud([[0, 0, 0.2], [0, 0, 1.0], [0, 0, 2.5]])
    T = RigidTransform(translation=[0, 0, 5.0])
    out = transform_and_band_filter(cloud, T)
    np.testing.assert_allclose(out.points, [[0, 0, 6.0]])
    assert out.frame == "base"


def test_point_cloud_rejects_nan_and_mismatched_normals():
    with pytest.raises(InputError):
        PointCloud([[0, 0, np.nan]])
    with pytest.raises(InputError):
        PointCloud(np.zeros((3, 3)), normals=np.zeros((2, 3)))


def test_voxel_downsample_centroids():
    pts = np.array([[0.001, 0.001, 0.001], [0.003, 0.003, 0.003], [0.015, 0.0, 0.0]])
    out = voxel_downsample(pts, 0.01)
    np.testing.assert_allclose(out, [[0.002, 0.002, 0.002], [0.015, 0.0, 0.0]])
    assert voxel_downsample(np.zeros((0, 3)), 0.01).shape == (0, 3)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_voxel_downsample_order_invariant(seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-0.1, 0.1, (200, 3))
    a = voxel_downsample(pts, 0.03)
    b = voxel_downsample(pts[rng.permutation(200)], 0.03)
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_merge_scan_filters_near_and_outside():
    near = PointCloud([[0, 0, 0.1], [0, 0, 0.5], [0, 0, 1.2]])
    lift = RigidTransform(translation=[0, 0, 0.5])
    out = merge_scan([(near, lift)])
    np.testing.assert_allclose(out.points, [[0, 0, 1.0]])  # 1.7 falls outside the workspace
    out2 = merge_scan([(near, RigidTransform())], workspace=Box3D((-1, -1, 0), (1, 1, 2)))
    assert len(out2) == 2
    with pytest.raises(InputError):
        merge_scan([])


def plane_scene(seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.3, 0.3, (4000, 2))
    table = np.column_stack([xy, 0.8 + 0.1 * xy[:, 0] + rng.normal(0, 0.001, 4000)])
    box = rng.uniform([-0.05, -0.05, 0.7], [0.05, 0.05, 0.76], (600, 3))
    return PointCloud(np.vstack([table, box]))


def test_ransac_recovers_plane():
    fit, residual = fit_plane_ransac(plane_scene(), downsample=None, iters=500)
    n = np.array([-0.1, 0.0, 1.0]) / math.sqrt(1.01)
    assert abs(fit.coeffs[:3] @ n) > 0.999
    assert fit.coeffs[2] > 0
    assert abs(fit.coeffs[3] + 0.8 / math.sqrt(1.01)) < 0.005
    assert 500 <= len(residual) <= 700


def test_ransac_is_seeded():
    a, ra = fit_plane_ransac(plane_scene(), seed=4, iters=200)
    b, rb = fit_plane_ransac(plane_scene(), seed=4, iters=200)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
    np.testing.assert_array_equal(ra.points, rb.points)


def test_ransac_degenerate_inputs():
    with pytest.raises(GeometryError):
        fit_plane_ransac(PointCloud(np.zeros((2, 3))), downsample=None)
    line = np.outer(np.linspace(0, 1, 50), [1.0, 2.0, 3.0])
    with pytest.raises(GeometryError):
        fit_plane_ransac(PointCloud(line), downsample=None)


def test_canonicalize_normals_tie_breaks():
    n = np.array([[0, 0, -1.0], [0, -1.0, 0], [-1.0, 0, 0], [0.3, 0.2, 0.5]])
    out = canonicalize_normals(n)
    np.testing.assert_array_equal(out, [[0, 0, 1], [0, 1, 0], [1, 0, 0], [0.3, 0.2, 0.5]])


def test_estimate_normals_on_plane():
    g = np.stack(np.meshgrid(np.arange(20), np.arange(20)), -1).reshape(-1, 2) * 0.002
    R = rotation_from_rpy(0.3, -0.2, 0.0)
    pts = np.column_stack([g, np.zeros(len(g))]) @ R.T
    normals = estimate_normals(PointCloud(pts))
    expected = canonicalize_normals(R[:, 2][None])[0]
    np.testing.assert_allclose(normals, np.tile(expected, (len(pts), 1)), atol=1e-9)


def test_estimate_normals_isolated_fallback():
    pts = np.array([[0, 0, 0], [1.0, 0, 0], [0, 1.0, 0]])
    np.testing.assert_array_equal(estimate_normals(PointCloud(pts)), np.tile([0, 0, 1.0], (3, 1)))


def two_blobs(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.normal([0, 0, 1], 0.005, (80, 3))
    b = rng.normal([0.2, 0, 1], 0.005, (60, 3))
    noise = np.array([[1.0, 1.0, 1.0]])
    return np.vstack([a, b, noise])


def test_cluster_objects_finds_blobs():
    pts = two_blobs()
    clusters = cluster_objects(PointCloud(pts), np.tile([0, 0, 1.0], (len(pts), 1)))
    assert [len(c.members) for c in clusters] == [80, 60]
    np.testing.assert_allclose(clusters[0].centroid, pts[:80].mean(0))


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_cluster_objects_order_invariant(seed):
    pts = two_blobs(seed)
    nrm = np.tile([0, 0, 1.0], (len(pts), 1))
    perm = np.random.default_rng(seed).permutation(len(pts))
    a = cluster_objects(PointCloud(pts), nrm)
    b = cluster_objects(PointCloud(pts[perm]), nrm)
    assert len(a) == len(b)
    for ca, cb in zip(a, b):
        assert sorted(map(tuple, pts[ca.members])) == sorted(map(tuple, pts[perm][cb.members]))


def test_cluster_prompts_on_synthetic_depth():
    intr = CameraIntrinsics(200.0, 200.0, 80.0, 60.0, 160, 120)
    depth = np.full((120, 160), 1.0)
    depth[50:70, 70:90] = 0.9  # a 10 cm box in front of a wall
    prompts = cluster_prompts(depth, intr, iters=300)
    assert len(prompts) == 1
    u, v = prompts[0]
    assert abs(u - 79.5) < 1.0 and abs(v - 59.5) < 1.0
