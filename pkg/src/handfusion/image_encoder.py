"""Pyramid image features, center/mask decoders and center-feature extraction.

Level shapes: F1 is the normalized image (3 x H x W), F2 is 64 x H/2 x W/2 and
F3 is 256 x H/4 x W/4.  Heatmap channel 0 is the left hand, channel 1 the right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, Tensor, ops
from .errors import DimensionError

HEATMAP_STRIDE = 4


@dataclass
class PyramidImageFeatures:
    f1: Tensor  # (B, 3, H, W)
    f2: Tensor  # (B, 64, H/2, W/2)
    f3: Tensor  # (B, 256, H/4, W/4)

    def level(self, i: int) -> Tensor:
        return (self.f1, self.f2, self.f3)[i]


@dataclass
class CenterPrediction:
    heatmaps: Tensor  # (B, 2, H/4, W/4) in [0, 1]
    peaks: np.ndarray  # (B, 2, 2) full-resolution (u, v) per hand
    confidence: np.ndarray  # (B, 2) heatmap value at each peak


def normalize_image(rgb: np.ndarray) -> np.ndarray:
    """uint8 or [0, 255] float (..., 3, H, W) -> zero-centered [-0.5, 0.5]."""
    return np.asarray(rgb, dtype=np.float64) / 255.0 - 0.5


class ImageEncoder(Module):
    """Six conv blocks (conv + bias + relu); strides sit in blocks 1 and 4."""

    def __init__(self, rng: np.random.Generator, width: int = 16):
        super().__init__()
        w = width
        self.blocks = [
            Conv2d(3, w, 4, rng, stride=2, padding=1),
            Conv2d(w, w, 3, rng, padding=1),
            Conv2d(w, 64, 3, rng, padding=1),
            Conv2d(64, 64, 2, rng, stride=2),
            Conv2d(64, 128, 3, rng, padding=1),
            Conv2d(128, 256, 1, rng),
        ]

    def forward(self, image: Tensor) -> PyramidImageFeatures:
        H, W = image.shape[-2:]
        if H % 4 or W % 4:
            raise DimensionError(f"image size {H}x{W} is not divisible by 4")
        x = image
        feats = []
        for i, block in enumerate(self.blocks):
            x = ops.relu(block(x))
            if i in (2, 5):
                feats.append(x)
        return PyramidImageFeatures(image, feats[0], feats[1])


def encode_pyramid(image: Tensor, encoder: ImageEncoder) -> PyramidImageFeatures:
    if image.ndim == 3:
        image = ops.reshape(image, (1,) + image.shape)
    return encoder(image)


def find_peaks(heatmaps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Global argmax per channel, first occurrence in row-major order.

    heatmaps (B, 2, h, w) -> peaks (B, 2, 2) as full-resolution (u, v) = 4 (j, i)
    and the heatmap value there.
    """
    B, C, h, w = heatmaps.shape
    flat = heatmaps.reshape(B, C, h * w)
    idx = np.argmax(flat, axis=-1)
    i, j = np.divmod(idx, w)
    peaks = np.stack([j, i], axis=-1) * HEATMAP_STRIDE
    return peaks.astype(np.int64), np.take_along_axis(flat, idx[..., None], -1)[..., 0]


class CenterDecoder(Module):
    def __init__(self, rng: np.random.Generator, c_in: int = 256):
        super().__init__()
        self.up1 = ConvTranspose2d(c_in, 64, 1, rng)
        self.bn1 = BatchNorm2d(64)
        self.up2 = ConvTranspose2d(64, 32, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(32)
        self.head = Conv2d(32, 2, 1, rng)
        # start with a low background response, as is usual for heatmap heads
        self.head.bias.data[...] = -2.19

    def forward(self, pyr: PyramidImageFeatures) -> CenterPrediction:
        x = ops.relu(self.bn1(self.up1(pyr.f3)))
        x = ops.relu(self.bn2(self.up2(x)))
        hm = ops.sigmoid(self.head(x))
        peaks, conf = find_peaks(hm.data)
        return CenterPrediction(hm, peaks, conf)


def center_distance_maps(peaks: np.ndarray, h: int, w: int, dtype=np.float64) -> np.ndarray:
    """Per-hand distance from each F3 cell to that hand's center pixel.

    peaks (B, 2, 2) full-resolution (u, v) -> (B, 2, h, w), in units of the
    longer full-resolution image side.
    """
    peaks = np.asarray(peaks, dtype=np.float64)
    ii, jj = np.meshgrid(np.arange(h) * HEATMAP_STRIDE, np.arange(w) * HEATMAP_STRIDE, indexing="ij")
    du = jj[None, None] - peaks[..., 0, None, None]
    dv = ii[None, None] - peaks[..., 1, None, None]
    return (np.hypot(du, dv) / (HEATMAP_STRIDE * max(h, w))).astype(dtype)


class MaskDecoder(Module):
    """Per-hand masks from F3 plus one distance-to-center channel per hand.

    Local image features alone cannot tell a left hand from a right one; the
    distance channels tie each mask channel to its hand's detected center.
    """

    def __init__(self, rng: np.random.Generator, c_in: int = 256):
        super().__init__()
        self.up1 = ConvTranspose2d(c_in + 2, 32, 2, rng, stride=2)
        self.bn1 = BatchNorm2d(32)
        self.up2 = ConvTranspose2d(32, 16, 2, rng, stride=2)
        self.bn2 = BatchNorm2d(16)
        self.head = Conv2d(16, 2, 1, rng)

    def forward(self, pyr: PyramidImageFeatures, peaks: np.ndarray) -> Tensor:
        B, _, h, w = pyr.f3.shape
        dist = Tensor(center_distance_maps(peaks, h, w, pyr.f3.dtype))
        x = ops.concat([pyr.f3, dist], axis=1)
        x = ops.relu(self.bn1(self.up1(x)))
        x = ops.relu(self.bn2(self.up2(x)))
        return ops.sigmoid(self.head(x))


def decode_center(pyr: PyramidImageFeatures, decoder: CenterDecoder) -> CenterPrediction:
    return decoder(pyr)


def decode_mask(pyr: PyramidImageFeatures, decoder: MaskDecoder, peaks: np.ndarray) -> Tensor:
    return decoder(pyr, peaks)


def gather_center_columns(f3: Tensor, peaks: np.ndarray, image_of: np.ndarray | None = None) -> Tensor:
    """F3 columns under full-resolution peaks.

    f3 (B, C, h, w); peaks (n, 2) pixel (u, v); image_of (n,) picks the batch
    entry (defaults to 0..n-1).  Returns (n, C).
    """
    B, C, h, w = f3.shape
    peaks = np.asarray(peaks)
    if image_of is None:
        image_of = np.arange(len(peaks))
    u = np.clip(peaks[:, 0] // HEATMAP_STRIDE, 0, w - 1).astype(np.int64)
    v = np.clip(peaks[:, 1] // HEATMAP_STRIDE, 0, h - 1).astype(np.int64)
    table = ops.reshape(ops.transpose(f3, (0, 2, 3, 1)), (B * h * w, C))
    return ops.gather_rows(table, np.asarray(image_of) * h * w + v * w + u)


class CenterFeature(Module):
    """Learned linear map of the F3 column at a hand's center to ``dim`` channels."""

    def __init__(self, rng: np.random.Generator, c_in: int = 256, dim: int = 256):
        super().__init__()
        self.proj = Linear(c_in, dim, rng)

    def forward(self, f3: Tensor, peaks: np.ndarray, image_of: np.ndarray | None = None) -> Tensor:
        return self.proj(gather_center_columns(f3, peaks, image_of))


def extract_center_feature(f3: Tensor, peaks: np.ndarray, module: CenterFeature,
                           image_of: np.ndarray | None = None) -> Tensor:
    return module(f3, peaks, image_of)


def gaussian_heatmap(h: int, w: int, center_cell, sigma: float = 2.0) -> np.ndarray:
    """Gaussian splat on the (h, w) grid, exactly 1 at the integer center cell."""
    cj, ci = int(center_cell[0]), int(center_cell[1])
    jj = np.arange(w)[None, :]
    ii = np.arange(h)[:, None]
    out = np.exp(-((jj - cj) ** 2 + (ii - ci) ** 2) / (2 * sigma * sigma))
    if 0 <= ci < h and 0 <= cj < w:
        out[ci, cj] = 1.0
    return out


def center_cell(uv, h: int, w: int) -> tuple[int, int]:
    """Heatmap cell (j, i) holding a full-resolution pixel, rounded and clamped."""
    j = int(np.clip(np.rint(uv[0] / HEATMAP_STRIDE), 0, w - 1))
    i = int(np.clip(np.rint(uv[1] / HEATMAP_STRIDE), 0, h - 1))
    return j, i
