import numpy as np
import pytest
from hypothesis import given, strategies as st

from handfusion.autodiff import Tensor
from handfusion.errors import ConfigError, DimensionError, FusionSkipped
from handfusion.fusion import FeatureTransform, PDFNet, build_clouds, final_condition, fuse_pyramid, transform
from handfusion.geometry import PointCloud
from handfusion.image_encoder import ImageEncoder, normalize_image

SMALL = dict(radii=(0.03, 0.06), ks=(8, 8), sizes=(32, 8))


@pytest.fixture(scope="module")
def scene():
    rng = np.random.default_rng(0)
    enc = ImageEncoder(rng, width=8)
    pyr = enc(Tensor(normalize_image(rng.integers(0, 255, size=(2, 3, 32, 32))).astype(np.float32)))
    xyz = rng.normal(size=(3, 64, 3)) * 0.02
    pix = rng.integers(0, 32, size=(3, 64, 2))
    clouds = build_clouds(xyz, pix, [0, 1, 1], **SMALL)
    return pyr, clouds


def test_zero_init_ftn_equals_point_only(scene):
    pyr, clouds = scene
    full = PDFNet(np.random.default_rng(5), "pdfnet", center_feature=False)
    point_only = PDFNet(np.random.default_rng(5), "depth_only", center_feature=False)
    np.testing.assert_array_equal(full.point_global(pyr, clouds).data, point_only.point_global(None, clouds).data)


def test_trained_ftn_changes_output(scene):
    pyr, clouds = scene
    full = PDFNet(np.random.default_rng(5), "pdfnet", center_feature=False)
    base = full.point_global(pyr, clouds).data
    last = full.psi[2].mlp.layers[-1].weight
    last.data[...] = np.random.default_rng(1).normal(size=last.shape) * 0.1
    assert not np.array_equal(full.point_global(pyr, clouds).data, base)


def test_concat_mode_uses_image(scene):
    pyr, clouds = scene
    net = PDFNet(np.random.default_rng(5), "concat", center_feature=False)
    assert net.level_fusion == "concat"
    blank = type(pyr)(Tensor(pyr.f1.data * 0), Tensor(pyr.f2.data * 0), Tensor(pyr.f3.data * 0))
    assert not np.allclose(net.point_global(pyr, clouds).data, net.point_global(blank, clouds).data)


def test_ftn_false_falls_back_to_concat():
    assert PDFNet(np.random.default_rng(0), "pdfnet", ftn=False).level_fusion == "concat"


def test_rgb_only_starts_at_zero():
    rng = np.random.default_rng(0)
    net = PDFNet(rng, "rgb_only", center_dim=8)
    out = net(None, None, Tensor(rng.normal(size=(4, 8))), n=4)
    assert out.shape == (4, 1024) and np.all(out.data == 0)
    with pytest.raises(ConfigError):
        PDFNet(rng, "rgb_only", center_feature=False)


def test_invalid_clouds_give_zero_global(scene):
    pyr, clouds = scene
    net = PDFNet(np.random.default_rng(5), "depth_only", center_feature=False)
    masked = build_clouds(clouds.xyz, clouds.pix[0], clouds.image_of, valid=[True, False, True], **SMALL)
    g = net.point_global(None, masked).data
    assert np.all(g[1] == 0) and np.any(g[0] != 0)


def test_final_condition_identity_at_init():
    rng = np.random.default_rng(0)
    m = FeatureTransform(4, 6, rng)
    g = rng.normal(size=(3, 6))
    np.testing.assert_array_equal(final_condition(Tensor(rng.normal(size=(3, 4))), Tensor(g), m).data, g)


@given(st.integers(0, 10_000))
def test_transform_formula(seed):
    rng = np.random.default_rng(seed)
    p, a, b = rng.normal(size=(3, 5, 4))
    np.testing.assert_allclose(transform(Tensor(p), Tensor(a), Tensor(b)).data, p * (1 + a) + b, rtol=1e-12, atol=1e-14)


def test_shape_checks():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        transform(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3))))
    with pytest.raises(DimensionError):
        FeatureTransform(2, 3, rng)(Tensor(np.zeros((4, 2))), Tensor(np.zeros((5, 3))))


def test_fuse_pyramid_single_hand(scene):
    pyr, clouds = scene
    net = PDFNet(np.random.default_rng(5), "pdfnet", center_feature=False)
    cloud = PointCloud(clouds.xyz[1], clouds.pix[0][1])
    g = fuse_pyramid(pyr, cloud, net, image_index=1, **SMALL)
    np.testing.assert_allclose(g.data, net.point_global(pyr, clouds).data[1], rtol=1e-6)
    with pytest.raises(FusionSkipped):
        fuse_pyramid(pyr, PointCloud(np.zeros((0, 3)), np.zeros((0, 2), np.int64)), net)
