"""Geometric and photometric augmentation with consistent 3D ground truth.

The 2D similarity (rotation about the principal point, scale, translation)
is the image of a camera-frame rotation about the optical axis combined with
new intrinsics f' = s f and c' = c + t, so projections of the transformed 3D
ground truth land on the warped image.  This needs square pixels (fx == fy),
which the synthetic generator guarantees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..geometry import CameraIntrinsics
from .io import HandAnnotation, Sample


@dataclass(frozen=True)
class AugmentParams:
    scale: float = 1.0
    rotation_deg: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)  # pixels (u, v)
    brightness: float = 0.0  # jitter amplitudes, drawn per call from the seed
    contrast: float = 0.0
    saturation: float = 0.0
    flip: bool = False

    @property
    def is_geometric_identity(self) -> bool:
        return self.scale == 1.0 and self.rotation_deg == 0.0 and tuple(self.translation) == (0.0, 0.0)

    @property
    def is_color_identity(self) -> bool:
        return self.brightness == 0.0 and self.contrast == 0.0 and self.saturation == 0.0


@dataclass(frozen=True)
class AugmentRanges:
    scale: tuple[float, float] = (0.8, 1.2)
    rotation_deg: float = 30.0
    translation_frac: float = 0.1
    brightness: float = 0.2
    contrast: float = 0.2
    saturation: float = 0.2
    flip_prob: float = 0.5


def sample_params(rng: np.random.Generator, width: int, height: int, ranges: AugmentRanges = AugmentRanges()) -> AugmentParams:
    t = ranges.translation_frac
    return AugmentParams(
        scale=float(rng.uniform(*ranges.scale)),
        rotation_deg=float(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg)),
        translation=(float(rng.uniform(-t, t) * width), float(rng.uniform(-t, t) * height)),
        brightness=ranges.brightness,
        contrast=ranges.contrast,
        saturation=ranges.saturation,
        flip=bool(rng.uniform() < ranges.flip_prob),
    )


def flip_sample(s: Sample) -> Sample:
    """Horizontal flip: u -> W-1-u, x -> -x, left and right swap roles."""
    W = s.width
    intr = s.intrinsics
    new_intr = CameraIntrinsics(intr.fx, intr.fy, W - 1 - intr.cx, intr.cy)
    mirror = np.array([-1.0, 1.0, 1.0])
    hands = {}
    for src, dst in (("left", "right"), ("right", "left")):
        a = s.hands[src]
        hands[dst] = HandAnnotation(a.present, a.vertices * mirror, a.joints * mirror, a.mask[:, ::-1].copy())
    return Sample(s.rgb[:, :, ::-1].copy(), s.depth[:, ::-1].copy(), new_intr, hands, s.name, dict(s.meta))


def _warp(img: np.ndarray, matrix: np.ndarray, offset: np.ndarray, order: int) -> np.ndarray:
    return ndimage.affine_transform(img, matrix, offset=offset, order=order, mode="constant", cval=0.0)


def similarity_sample(s: Sample, scale: float, rotation_deg: float, translation) -> Sample:
    theta = np.deg2rad(rotation_deg)
    c, si = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -si], [si, c]])  # acts on (u, v) offsets from the principal point
    intr = s.intrinsics
    center = np.array([intr.cx, intr.cy])
    t = np.asarray(translation, dtype=np.float64)
    # output (u', v') = s R (p - c) + c + t, so the source is p = R^T (p' - c - t) / s + c;
    # ndimage works in (row, col) = (v, u) order
    inv = rot.T / scale
    swap = np.array([[0, 1], [1, 0]])
    m_vu = swap @ inv @ swap
    off_vu = swap @ (center - inv @ (center + t))
    rgb = np.stack([_warp(ch.astype(np.float64), m_vu, off_vu, 1) for ch in s.rgb])
    depth = _warp(s.depth, m_vu, off_vu, 0)
    new_intr = CameraIntrinsics(intr.fx * scale, intr.fy * scale, intr.cx + t[0], intr.cy + t[1])
    r3 = np.eye(3)
    r3[:2, :2] = rot
    hands = {
        h: HandAnnotation(a.present, a.vertices @ r3.T, a.joints @ r3.T,
                          _warp(a.mask.astype(np.uint8), m_vu, off_vu, 0) > 0)
        for h, a in s.hands.items()
    }
    return Sample(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), depth, new_intr, hands, s.name, dict(s.meta))


def color_jitter(rgb: np.ndarray, params: AugmentParams, rng: np.random.Generator) -> np.ndarray:
    x = rgb.astype(np.float64)
    b = 1.0 + rng.uniform(-params.brightness, params.brightness)
    ct = 1.0 + rng.uniform(-params.contrast, params.contrast)
    sa = 1.0 + rng.uniform(-params.saturation, params.saturation)
    x = x * b
    x = (x - x.mean()) * ct + x.mean()
    gray = x.mean(axis=0, keepdims=True)
    x = (x - gray) * sa + gray
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def augment(s: Sample, p: AugmentParams, seed=None) -> Sample:
    """Flip, then similarity, then color jitter; identity parameters return a copy."""
    out = s.copy()
    if p.flip:
        out = flip_sample(out)
    if not p.is_geometric_identity:
        out = similarity_sample(out, p.scale, p.rotation_deg, p.translation)
    if not p.is_color_identity:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        out.rgb = color_jitter(out.rgb, p, rng)
    return out


def fit_resolution(s: Sample, resolution: int) -> Sample:
    """Zero-pad to a square (bottom/right) and resize to ``resolution``.

    Pixel centers map as u' = k (u + 0.5) - 0.5 with k = resolution / side,
    so intrinsics become (k fx, k fy, k (cx + 0.5) - 0.5, k (cy + 0.5) - 0.5).
    """
    H, W = s.height, s.width
    if H == W == resolution:
        return s
    side = max(H, W)
    k = resolution / side

    def pad(img):
        out = np.zeros(img.shape[:-2] + (side, side), dtype=img.dtype)
        out[..., :H, :W] = img
        return out

    m = np.eye(2) / k
    off = np.full(2, 0.5 / k - 0.5)
    shape = (resolution, resolution)

    def warp(img, order):
        return ndimage.affine_transform(img, m, offset=off, output_shape=shape, order=order, mode="constant", cval=0.0)

    rgb = np.stack([warp(ch.astype(np.float64), 1) for ch in pad(s.rgb)])
    intr = s.intrinsics
    new_intr = CameraIntrinsics(intr.fx * k, intr.fy * k, k * (intr.cx + 0.5) - 0.5, k * (intr.cy + 0.5) - 0.5)
    hands = {h: HandAnnotation(a.present, a.vertices.copy(), a.joints.copy(), warp(pad(a.mask.astype(np.uint8)), 0) > 0)
             for h, a in s.hands.items()}
    return Sample(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), warp(pad(s.depth), 0), new_intr, hands,
                  s.name, dict(s.meta))
