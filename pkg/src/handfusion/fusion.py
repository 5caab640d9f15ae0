"""Pyramid deep fusion of image and point features.

At every pyramid level the image features under each surviving point's source
pixel are fetched, a small network turns (image, point) features into a
per-element scale and shift, and the modulated point features feed the next
set-abstraction level.  After the global PointNet the per-hand center feature
modulates the global vector the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, Linear, Module, Tensor, get_default_dtype, ops
from .errors import ConfigError, DimensionError, FusionSkipped
from .geometry import PointCloud, fetch_features_batched
from .image_encoder import PyramidImageFeatures
from .point_encoder import GroupingPlan, PointNetGlobal, SetAbstraction, plan_level

MODES = ("pdfnet", "rgb_only", "depth_only", "concat")
LEVEL_SCALES = (1, 2, 4)
IMAGE_CHANNELS = (3, 64, 256)
POINT_CHANNELS = (3, 131, 259)


@dataclass
class HandClouds:
    """Point sets of n hand instances plus their precomputed grouping plans.

    ``xyz`` are the network's point coordinates (already expressed relative
    to the per-hand anchor); the plans were built from the same geometry.
    """

    xyz: np.ndarray  # (n, N, 3)
    pix: list[np.ndarray]  # per level: (n, N_l, 2) source pixels of the level's points
    image_of: np.ndarray  # (n,) batch index of the image each hand comes from
    plans: list[GroupingPlan]  # two abstraction levels
    valid: np.ndarray  # (n,) False where the cloud was empty and a dummy stands in

    def __len__(self) -> int:
        return len(self.xyz)


def build_clouds(xyz: np.ndarray, pix: np.ndarray, image_of, valid=None,
                 radii=(0.05, 0.12), ks=(32, 64), sizes=(512, 128)) -> HandClouds:
    """Run FPS and ball query for both abstraction levels."""
    xyz = np.asarray(xyz, dtype=np.float64)
    n = len(xyz)
    plan1 = plan_level(xyz, sizes[0], radii[0], ks[0])
    xyz2 = np.take_along_axis(xyz, plan1.centers[..., None], axis=1)
    plan2 = plan_level(xyz2, sizes[1], radii[1], ks[1])
    pix = np.asarray(pix)
    pix2 = np.take_along_axis(pix, plan1.centers[..., None], axis=1)
    pix3 = np.take_along_axis(pix2, plan2.centers[..., None], axis=1)
    valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    return HandClouds(xyz, [pix, pix2, pix3], np.asarray(image_of, dtype=np.int64), [plan1, plan2], valid)


class FeatureTransform(Module):
    """Two-layer MLP on concat(image, point) emitting (alpha, beta).

    The last layer starts at zero so the modulation starts as the identity.
    """

    def __init__(self, c_f: int, c_p: int, rng: np.random.Generator):
        super().__init__()
        self.c_f, self.c_p = c_f, c_p
        self.mlp = MLP([c_f + c_p, c_p, 2 * c_p], rng, zero_last=True)

    def forward(self, rgb: Tensor, point: Tensor) -> tuple[Tensor, Tensor]:
        if rgb.shape[:-1] != point.shape[:-1]:
            raise DimensionError(f"row mismatch: {rgb.shape} vs {point.shape}")
        out = self.mlp(ops.concat([rgb, point], axis=-1))
        alpha, beta = ops.split(out, [self.c_p, self.c_p], axis=-1)
        return alpha, beta


def ftn(rgb: Tensor, point: Tensor, module: FeatureTransform) -> tuple[Tensor, Tensor]:
    return module(rgb, point)


def transform(p: Tensor, alpha: Tensor, beta: Tensor) -> Tensor:
    """Residual affine modulation ``p * (1 + alpha) + beta``."""
    if not (p.shape == alpha.shape == beta.shape):
        raise DimensionError(f"shape mismatch: {p.shape}, {alpha.shape}, {beta.shape}")
    return ops.add(ops.add(p, ops.mul(p, alpha)), beta)


class ConcatMerge(Module):
    """Fusion without modulation: concat(image, point) -> linear back to C_p."""

    def __init__(self, c_f: int, c_p: int, rng: np.random.Generator):
        super().__init__()
        self.proj = Linear(c_f + c_p, c_p, rng)

    def forward(self, rgb: Tensor, point: Tensor) -> Tensor:
        return self.proj(ops.concat([rgb, point], axis=-1))


def final_condition(center: Tensor, g: Tensor, module: FeatureTransform) -> Tensor:
    alpha, beta = module(center, g)
    return transform(g, alpha, beta)


class PDFNet(Module):
    """Point pyramid with per-level image fusion and center conditioning.

    ``mode``:
      * ``pdfnet``: per-level feature transformation (``ftn=False`` falls back to concat)
      * ``concat``: per-level concat + linear merge
      * ``depth_only``: point branch alone
      * ``rgb_only``: global point vector replaced by zeros; only the center
        feature reaches the output, through the final conditioning
    """

    def __init__(self, rng: np.random.Generator, mode: str = "pdfnet", ftn: bool = True,
                 center_feature: bool = True, fetch: str = "nearest", center_dim: int = 256,
                 global_dim: int = 1024):
        super().__init__()
        if mode not in MODES:
            raise ConfigError(f"fusion.mode must be one of {MODES}, got {mode!r}")
        if mode == "rgb_only" and not center_feature:
            raise ConfigError("rgb_only mode needs fusion.center_feature = true")
        self.mode, self.fetch = mode, fetch
        self.global_dim = global_dim
        if mode == "pdfnet" and ftn:
            self.level_fusion = "ftn"
        elif mode in ("pdfnet", "concat"):
            self.level_fusion = "concat"
        else:
            self.level_fusion = "none"
        self.sa1 = SetAbstraction(POINT_CHANNELS[0], rng)
        self.sa2 = SetAbstraction(POINT_CHANNELS[1], rng)
        self.pointnet = PointNetGlobal(POINT_CHANNELS[2], rng, out=global_dim)
        pairs = list(zip(IMAGE_CHANNELS, POINT_CHANNELS))
        if self.level_fusion == "ftn":
            self.psi = [FeatureTransform(cf, cp, rng) for cf, cp in pairs]
        elif self.level_fusion == "concat":
            self.merge = [ConcatMerge(cf, cp, rng) for cf, cp in pairs]
        self.psi_final = FeatureTransform(center_dim, global_dim, rng) if center_feature else None

    @property
    def uses_points(self) -> bool:
        return self.mode != "rgb_only"

    @property
    def uses_image(self) -> bool:
        return self.level_fusion != "none"

    def _fuse_level(self, i: int, p: Tensor, pyr: PyramidImageFeatures | None, clouds: HandClouds) -> Tensor:
        if self.level_fusion == "none":
            return p
        rgb = fetch_features_batched(pyr.level(i), clouds.pix[i], clouds.image_of, LEVEL_SCALES[i], self.fetch)
        if self.level_fusion == "concat":
            return self.merge[i](rgb, p)
        alpha, beta = self.psi[i](rgb, p)
        return transform(p, alpha, beta)

    def point_global(self, pyr: PyramidImageFeatures | None, clouds: HandClouds) -> Tensor:
        """Global vector G (n, global_dim) after the three fused levels."""
        p1 = Tensor(clouds.xyz.astype(get_default_dtype()))
        q1 = self._fuse_level(0, p1, pyr, clouds)
        p2 = self.sa1(q1, clouds.plans[0], center_feats=p1)
        q2 = self._fuse_level(1, p2, pyr, clouds)
        p3 = self.sa2(q2, clouds.plans[1], center_feats=p2)
        q3 = self._fuse_level(2, p3, pyr, clouds)
        g = self.pointnet(q3)
        if not clouds.valid.all():
            g = ops.mul(g, clouds.valid.astype(g.dtype)[:, None])
        return g

    def forward(self, pyr: PyramidImageFeatures | None, clouds: HandClouds | None,
                center: Tensor | None = None, n: int | None = None) -> Tensor:
        """Fused global vector per hand instance, (n, global_dim)."""
        if self.uses_points:
            g = self.point_global(pyr, clouds)
        else:
            rows = len(clouds) if clouds is not None else (n if n is not None else center.shape[0])
            g = Tensor(np.zeros((rows, self.global_dim), dtype=get_default_dtype()))
        if self.psi_final is None:
            return g
        if center is None:
            raise DimensionError("center features required for the final conditioning")
        return final_condition(center, g, self.psi_final)


def fuse_pyramid(pyr: PyramidImageFeatures, cloud: PointCloud, net: PDFNet, image_index: int = 0,
                 anchor=None, **plan_kwargs) -> Tensor:
    """Single-hand global vector G (before center conditioning).

    Raises :class:`FusionSkipped` on an empty cloud; callers substitute zeros.
    """
    if len(cloud) == 0:
        raise FusionSkipped(f"{cloud.hand}: empty cloud")
    xyz = cloud.points - (np.zeros(3) if anchor is None else np.asarray(anchor))
    clouds = build_clouds(xyz[None], cloud.pixel_index[None], [image_index], **plan_kwargs)
    return ops.reshape(net.point_global(pyr, clouds), (net.global_dim,))
