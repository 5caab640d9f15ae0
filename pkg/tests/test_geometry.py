import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from handfusion.autodiff import Tensor, default_dtype
from handfusion.errors import ContractError, EmptyCloudError, ProjectionError
from handfusion.geometry import (
    CameraIntrinsics, PointCloud, back_project, fetch_features, fetch_features_batched, filter_outliers, project,
    project_tensor, sample_fixed,
)


def test_back_project_example():
    depth = np.zeros((100, 200))
    depth[50, 150] = 2.0
    mask = depth > 0
    pc = back_project(depth, mask, CameraIntrinsics(100, 100, 50, 50))
    np.testing.assert_allclose(pc.points, [[2.0, 0.0, 2.0]])
    np.testing.assert_array_equal(pc.pixel_index, [[150, 50]])


def test_back_project_skips_zero_depth_and_raises_when_empty():
    depth = np.zeros((4, 4))
    mask = np.ones((4, 4), bool)
    with pytest.raises(EmptyCloudError):
        back_project(depth, mask, CameraIntrinsics(1, 1, 2, 2))


def test_filter_removes_far_point():
    pts = np.array([[0, 0, 0.5], [0, 0, 0.5], [0, 0, 0.5], [0, 0, 0.7]])
    pc = PointCloud(pts, np.zeros((4, 2), np.int64))
    out = filter_outliers(pc, 0.08)
    assert len(out) == 3 and np.all(out.points[:, 2] == 0.5)


def test_sample_fixed_sizes():
    pc = PointCloud(np.arange(30.0).reshape(10, 3), np.zeros((10, 2), np.int64))
    assert len(sample_fixed(pc, 4, 0)) == 4
    up = sample_fixed(pc, 25, 0)
    assert len(up) == 25 and set(map(tuple, up.points)) <= set(map(tuple, pc.points))
    few = sample_fixed(pc, 10, 0)
    assert sorted(few.points[:, 0]) == sorted(pc.points[:, 0])


def test_projection_rejects_points_behind_camera():
    with pytest.raises(ProjectionError):
        project(np.array([[0.0, 0.0, -1.0]]), CameraIntrinsics(1, 1, 0, 0))


def test_principal_point_must_lie_in_image():
    with pytest.raises(ContractError):
        CameraIntrinsics(100, 100, 300, 10).check_image(100, 200)
    with pytest.raises(ContractError):
        CameraIntrinsics(-1, 100, 3, 3)


@given(arrays(np.float64, (20,), elements=st.floats(0.2, 3.0)), st.floats(50, 500), st.integers(0, 99))
def test_back_project_project_round_trip(zs, f, seed):
    rng = np.random.default_rng(seed)
    H, W = 40, 60
    depth = np.zeros((H, W))
    u, v = rng.integers(0, W, 20), rng.integers(0, H, 20)
    depth[v, u] = zs
    intr = CameraIntrinsics(f, f * 1.1, W / 2 - 0.3, H / 2 + 0.2)
    pc = back_project(depth, depth > 0, intr)
    uv = project(pc.points, intr)
    assert np.abs(uv - pc.pixel_index).max() <= 0.5


def test_project_tensor_matches_numpy():
    pts = np.array([[[0.1, -0.05, 0.6], [0.0, 0.02, 0.4]]])
    intr = CameraIntrinsics(150, 160, 48, 47)
    with default_dtype(np.float64):
        got = project_tensor(Tensor(pts), intr.fx, intr.fy, intr.cx, intr.cy).data
    np.testing.assert_allclose(got[0], project(pts[0], intr), rtol=1e-14)


def test_fetch_stride_four_maps_pixels_to_cells():
    fmap = np.arange(2 * 3 * 3, dtype=np.float64).reshape(2, 3, 3)
    pix = np.array([[u, 0] for u in range(4)] + [[4, 0], [11, 11], [40, 40]])
    out = fetch_features(Tensor(fmap), pix, 4).data
    for i in range(4):
        np.testing.assert_array_equal(out[i], fmap[:, 0, 0])
    np.testing.assert_array_equal(out[4], fmap[:, 0, 1])
    np.testing.assert_array_equal(out[5], fmap[:, 2, 2])
    np.testing.assert_array_equal(out[6], fmap[:, 2, 2])  # clamped


def test_bilinear_fetch_reproduces_affine_maps():
    h, w = 4, 5
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    fmap = np.stack([2 * xx + 3 * yy + 1])[None]
    pix = np.array([[[3, 5], [9, 2], [1, 1]]])
    out = fetch_features_batched(Tensor(fmap), pix, np.array([0]), 2, "bilinear").data[0, :, 0]
    fu = np.clip((pix[0, :, 0] + 0.5) / 2 - 0.5, 0, w - 1)
    fv = np.clip((pix[0, :, 1] + 0.5) / 2 - 0.5, 0, h - 1)
    np.testing.assert_allclose(out, 2 * fu + 3 * fv + 1, rtol=1e-12)


def test_batched_fetch_reads_the_right_image():
    fmaps = np.stack([np.zeros((1, 2, 2)), np.ones((1, 2, 2))])
    pix = np.zeros((3, 1, 2), np.int64)
    out = fetch_features_batched(Tensor(fmaps), pix, np.array([1, 0, 1]), 1).data
    np.testing.assert_array_equal(out[:, 0, 0], [1, 0, 1])
