import numpy as np
import pytest
from hypothesis import given, strategies as st

from handfusion.autodiff import Tensor
from handfusion.errors import DimensionError
from handfusion.image_encoder import (
    CenterDecoder, CenterFeature, ImageEncoder, MaskDecoder, PyramidImageFeatures, center_cell, center_distance_maps,
    encode_pyramid, find_peaks, gather_center_columns, gaussian_heatmap, normalize_image,
)


@pytest.fixture(scope="module")
def parts():
    rng = np.random.default_rng(0)
    return ImageEncoder(rng, width=8), CenterDecoder(rng), MaskDecoder(rng)


def test_pyramid_shapes(parts):
    enc, center, mask = parts
    pyr = encode_pyramid(Tensor(normalize_image(np.zeros((3, 32, 48)))), enc)
    assert pyr.f1.shape == (1, 3, 32, 48)
    assert pyr.f2.shape == (1, 64, 16, 24)
    assert pyr.f3.shape == (1, 256, 8, 12)
    assert center(pyr).heatmaps.shape == (1, 2, 8, 12)
    assert mask(pyr, np.zeros((1, 2, 2))).shape == (1, 2, 32, 48)


def test_encoder_rejects_indivisible_size(parts):
    with pytest.raises(DimensionError):
        parts[0](Tensor(np.zeros((1, 3, 30, 32))))


def test_normalize_range():
    out = normalize_image(np.array([0, 255], dtype=np.uint8))
    np.testing.assert_allclose(out, [-0.5, 0.5])


def test_uniform_heatmap_peaks_at_first_cell():
    peaks, conf = find_peaks(np.full((1, 2, 5, 6), 0.3))
    np.testing.assert_array_equal(peaks[0], [[0, 0], [0, 0]])
    np.testing.assert_allclose(conf, 0.3)


@given(st.integers(0, 9), st.integers(0, 11))
def test_spike_peak_location(i, j):
    hm = np.zeros((1, 2, 10, 12))
    hm[0, 1, i, j] = 1.0
    peaks, _ = find_peaks(hm)
    assert peaks[0, 1].tolist() == [4 * j, 4 * i]


def test_zero_logits_give_one_half(parts):
    rng = np.random.default_rng(1)
    center, mask = CenterDecoder(rng, c_in=4), MaskDecoder(rng, c_in=4)
    for head in (center.head, mask.head):
        head.weight.data[...] = 0
        head.bias.data[...] = 0
    pyr = PyramidImageFeatures(None, None, Tensor(rng.normal(size=(1, 4, 3, 3))))
    np.testing.assert_allclose(center(pyr).heatmaps.data, 0.5)
    np.testing.assert_allclose(mask(pyr, np.zeros((1, 2, 2))).data, 0.5)


def test_center_head_starts_low(parts):
    enc, center, _ = parts
    pyr = enc(Tensor(normalize_image(np.random.default_rng(0).integers(0, 255, (1, 3, 32, 32)))))
    # bias -2.19 puts the initial response near 0.1 before BN-relu contributions
    assert center(pyr).heatmaps.data.mean() < 0.5


def test_center_distance_maps():
    d = center_distance_maps(np.array([[[8, 4], [0, 0]]]), 3, 4)
    assert d.shape == (1, 2, 3, 4)
    assert d[0, 0, 1, 2] == 0.0
    assert np.isclose(d[0, 1, 2, 3], np.hypot(12, 8) / 16)


def test_mask_depends_on_the_centers():
    # on a blank feature map only the distance channels carry information
    rng = np.random.default_rng(2)
    mask = MaskDecoder(rng, c_in=3)
    mask.eval()
    pyr = PyramidImageFeatures(None, None, Tensor(np.zeros((1, 3, 4, 5))))
    a = mask(pyr, np.array([[[0, 8], [16, 8]]])).data
    b = mask(pyr, np.array([[[16, 8], [0, 8]]])).data
    assert not np.allclose(a, b)


def test_gaussian_heatmap_peak_is_one():
    hm = gaussian_heatmap(8, 10, (3, 5))
    assert hm[5, 3] == 1.0 and hm.max() == 1.0
    assert np.isclose(hm[5, 4], np.exp(-1 / 8))


def test_center_cell_rounds_and_clamps():
    assert center_cell((9.0, 5.0), 10, 10) == (2, 1)
    assert center_cell((-10.0, 500.0), 10, 10) == (0, 9)


def test_center_columns_gather():
    f3 = np.arange(2 * 3 * 2 * 2, dtype=np.float64).reshape(2, 3, 2, 2)
    cols = gather_center_columns(Tensor(f3), np.array([[4, 0], [0, 7]]), np.array([1, 0])).data
    np.testing.assert_array_equal(cols[0], f3[1, :, 0, 1])
    np.testing.assert_array_equal(cols[1], f3[0, :, 1, 0])


def test_center_feature_is_linear_in_column():
    rng = np.random.default_rng(3)
    m = CenterFeature(rng, c_in=3, dim=2)
    f3 = rng.normal(size=(1, 3, 2, 2))
    out = m(Tensor(f3), np.array([[0, 0]]), np.array([0])).data
    np.testing.assert_allclose(out[0], f3[0, :, 0, 0] @ m.proj.weight.data + m.proj.bias.data, rtol=1e-6)
