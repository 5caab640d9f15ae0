"""End-to-end network: image branch, point clouds, fusion, mesh decoder, losses.

Hand instances are laid out image-major: instance ``2 b + h`` is hand ``h``
(0 left, 1 right) of image ``b``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .autodiff import Module, Tensor, get_default_dtype, ops
from .config import RunConfig
from .data.io import HANDS, Sample
from .errors import EmptyCloudError
from .fusion import HandClouds, PDFNet, build_clouds
from .gcn import HandPrediction, MeshDecoder
from .geometry import CameraIntrinsics, back_project, filter_outliers, project, sample_fixed
from .image_encoder import (
    HEATMAP_STRIDE, CenterDecoder, CenterFeature, ImageEncoder, MaskDecoder, center_cell, gaussian_heatmap,
    normalize_image,
)
from .point_encoder import GroupingPlan
from .topology import MeshTopology


@dataclass
class Batch:
    images: np.ndarray  # (B, 3, H, W) normalized
    depth: np.ndarray  # (B, H, W) meters
    intr: np.ndarray  # (B, 4) fx, fy, cx, cy
    heatmaps: np.ndarray  # (B, 2, H/4, W/4) GT targets
    masks: np.ndarray  # (B, 2, H, W) GT masks as float
    present: np.ndarray  # (B, 2) bool
    gt_verts: np.ndarray  # (B, 2, 778, 3) camera frame
    gt_joints: np.ndarray  # (B, 2, 21, 3)
    gt_peaks: np.ndarray  # (B, 2, 2) full-resolution pixel of the GT center cell
    names: list[str]

    @property
    def n_images(self) -> int:
        return len(self.images)

    def instance(self, field_name: str) -> np.ndarray:
        """Reshape a (B, 2, ...) field to the instance layout (2B, ...)."""
        arr = getattr(self, field_name)
        return arr.reshape((-1,) + arr.shape[2:])


def make_batch(samples: list[Sample], root_joint: int = 9) -> Batch:
    B = len(samples)
    H, W = samples[0].height, samples[0].width
    h, w = H // HEATMAP_STRIDE, W // HEATMAP_STRIDE
    heat = np.zeros((B, 2, h, w))
    peaks = np.zeros((B, 2, 2), dtype=np.int64)
    for b, s in enumerate(samples):
        for k, hand in enumerate(HANDS):
            a = s.hands[hand]
            if not a.present:
                continue
            uv = project(a.joints[root_joint][None], s.intrinsics)[0]
            cell = center_cell(uv, h, w)
            heat[b, k] = gaussian_heatmap(h, w, cell)
            peaks[b, k] = np.array(cell) * HEATMAP_STRIDE
    return Batch(
        images=np.stack([normalize_image(s.rgb) for s in samples]),
        depth=np.stack([s.depth for s in samples]),
        intr=np.stack([s.intrinsics.as_array() for s in samples]),
        heatmaps=heat,
        masks=np.stack([[s.hands[hd].mask for hd in HANDS] for s in samples]).astype(np.float64),
        present=np.array([[s.hands[hd].present for hd in HANDS] for s in samples]),
        gt_verts=np.stack([[s.hands[hd].vertices for hd in HANDS] for s in samples]),
        gt_joints=np.stack([[s.hands[hd].joints for hd in HANDS] for s in samples]),
        gt_peaks=peaks,
        names=[s.name for s in samples],
    )


@dataclass
class CloudEntry:
    """One hand's sampled cloud with its grouping plans (anchor-independent)."""

    points: np.ndarray  # (N, 3) camera frame
    pix: list[np.ndarray]
    plans: list[GroupingPlan]  # leading axis of size 1
    mean_z: float
    valid: bool


def _pixel_ray(uv, intr: np.ndarray, z: float) -> np.ndarray:
    fx, fy, cx, cy = intr
    return np.array([(uv[0] - cx) * z / fx, (uv[1] - cy) * z / fy, z])


class CloudBuilder:
    """Segment, filter, resample and plan per-hand clouds, caching deterministic ones."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.cache: dict[tuple, CloudEntry] = {}

    def _plan(self, points: np.ndarray, pix: np.ndarray) -> tuple[list[np.ndarray], list[GroupingPlan]]:
        p = self.cfg.points
        c = build_clouds(points[None], pix[None], [0], radii=p.radii, ks=p.neighbors, sizes=p.level_sizes)
        return c.pix, c.plans

    def entry(self, depth, mask, intr: np.ndarray, hand: str, seed, fallback_pixel) -> CloudEntry:
        p = self.cfg.points
        try:
            pc = back_project(depth, mask, CameraIntrinsics(*intr), hand)
            pc = filter_outliers(pc, p.band_meters)
        except EmptyCloudError:
            pts = np.zeros((p.n_points, 3))
            pix = np.tile(np.asarray(fallback_pixel, dtype=np.int64), (p.n_points, 1))
            pix_levels, plans = self._plan(pts, pix)
            return CloudEntry(pts, pix_levels, plans, float("nan"), False)
        mean_z = float(pc.points[:, 2].mean())
        pc = sample_fixed(pc, p.n_points, seed)
        pix_levels, plans = self._plan(pc.points, pc.pixel_index)
        return CloudEntry(pc.points, pix_levels, plans, mean_z, True)

    def build(self, batch: Batch, masks: np.ndarray, peaks: np.ndarray, rng: np.random.Generator | None,
              cache_tag: str | None = None) -> tuple[HandClouds, np.ndarray]:
        """Clouds for every instance plus root initializations (n, 3).

        ``masks`` (B, 2, H, W) bool selects the points; ``peaks`` (B, 2, 2) are
        the center pixels.  With ``cache_tag`` set (GT masks, no augmentation)
        the sampling seed is derived from the sample name and entries are reused.
        """
        entries, roots = [], []
        default_z = self.cfg.model.default_depth
        for b in range(batch.n_images):
            for k, hand in enumerate(HANDS):
                key = (cache_tag, batch.names[b], hand)
                if cache_tag is not None and key in self.cache:
                    e = self.cache[key]
                else:
                    if cache_tag is not None or rng is None:
                        # name-derived seed keeps evaluation deterministic
                        seed = np.random.default_rng([self.cfg.seed, zlib.crc32(batch.names[b].encode()), k])
                    else:
                        seed = rng
                    e = self.entry(batch.depth[b], masks[b, k], batch.intr[b], hand, seed, peaks[b, k])
                    if cache_tag is not None:
                        self.cache[key] = e
                entries.append(e)
                z = e.mean_z if e.valid else default_z
                roots.append(_pixel_ray(peaks[b, k], batch.intr[b], z))
        roots = np.array(roots)
        anchors = roots
        xyz = np.stack([e.points for e in entries]) - anchors[:, None, :]
        for i, e in enumerate(entries):
            if not e.valid:
                xyz[i] = 0.0
        plans = [
            GroupingPlan(
                np.concatenate([e.plans[l].centers for e in entries]),
                np.concatenate([e.plans[l].neighbors for e in entries]),
                np.concatenate([e.plans[l].rel for e in entries]),
            )
            for l in range(2)
        ]
        pix = [np.stack([e.pix[l][0] for e in entries]) for l in range(3)]
        image_of = np.repeat(np.arange(batch.n_images), 2)
        valid = np.array([e.valid for e in entries])
        return HandClouds(xyz, pix, image_of, plans, valid), roots


@dataclass
class Outputs:
    heatmaps: Tensor  # (B, 2, h, w)
    masks: Tensor  # (B, 2, H, W)
    peaks: np.ndarray  # (B, 2, 2) pixels used downstream
    confidence: np.ndarray  # (B, 2) predicted heatmap value at the predicted peak
    pred: HandPrediction  # instance layout
    root_init: np.ndarray  # (n, 3)
    valid: np.ndarray  # (n,) cloud available


class HandFusionNet(Module):
    def __init__(self, cfg: RunConfig, topo: MeshTopology, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.topo = topo
        f = cfg.fusion
        self.use_center = f.center_feature and f.mode != "depth_only"
        self.encoder = ImageEncoder(rng, cfg.model.encoder_width)
        self.center_head = CenterDecoder(rng)
        self.mask_head = MaskDecoder(rng)
        self.center_feature = CenterFeature(rng, 256, cfg.model.center_dim) if self.use_center else None
        self.fusion = PDFNet(rng, f.mode, f.ftn, self.use_center, f.fetch, cfg.model.center_dim)
        self.decoder = MeshDecoder(topo, rng, K=cfg.model.cheb_k)
        self.clouds = CloudBuilder(cfg)

    def forward(self, batch: Batch, gt_center: bool = True, gt_mask: bool = True,
                rng: np.random.Generator | None = None, cacheable: bool = False) -> Outputs:
        dt = get_default_dtype()
        pyr = self.encoder(Tensor(batch.images.astype(dt)))
        center = self.center_head(pyr)
        peaks = batch.gt_peaks if gt_center else center.peaks
        masks = self.mask_head(pyr, peaks)
        n = 2 * batch.n_images
        is_left = np.tile([True, False], batch.n_images)
        if self.fusion.uses_points:
            seg = batch.masks > 0.5 if gt_mask else masks.data > self.cfg.model.mask_threshold
            tag = "gt" if (gt_mask and cacheable) else None
            clouds, root_init = self.clouds.build(batch, seg, peaks, rng, tag)
        else:
            clouds = None
            z = self.cfg.model.default_depth
            root_init = np.array([_pixel_ray(peaks[i // 2, i % 2], batch.intr[i // 2], z) for i in range(n)])
        cfeat = None
        if self.center_feature is not None:
            cfeat = self.center_feature(pyr.f3, peaks.reshape(n, 2), np.repeat(np.arange(batch.n_images), 2))
        g = self.fusion(pyr if self.fusion.uses_image else None, clouds, cfeat, n=n)
        pred = self.decoder(g, root_init, is_left)
        valid = clouds.valid if clouds is not None else np.ones(n, dtype=bool)
        return Outputs(center.heatmaps, masks, peaks, center.confidence, pred, root_init, valid)


def compute_losses(out: Outputs, batch: Batch, topo: MeshTopology, weights: L.LossWeights) -> tuple[Tensor, dict]:
    B = batch.n_images
    w = batch.instance("present").astype(np.float64)
    gt_v = batch.instance("gt_verts")
    gt_j = batch.instance("gt_joints")
    r = topo.root_joint
    gt_root = gt_j[:, r]
    gt_v_al = gt_v - gt_root[:, None]
    gt_j_al = gt_j - gt_root[:, None]
    pred = out.pred
    terms = {
        "center": L.center_loss(out.heatmaps, batch.heatmaps),
        "mask": L.mask_loss(out.masks, batch.masks),
        "root": L.root_loss(pred.root, gt_root, w, B),
        "mesh": L.mesh_loss(pred.mesh_gcn, pred.mesh_full, gt_v_al, topo.select[2], w, B),
        "joint": L.joint_loss(pred.joints, gt_j_al, w, B),
    }
    if weights.w_reproj > 0:
        # absent hands carry placeholder geometry; keep their projections finite
        safe_v = np.where(w[:, None, None] > 0, gt_v, np.array([0.0, 0.0, 1.0]))
        safe_j = np.where(w[:, None, None] > 0, gt_j, np.array([0.0, 0.0, 1.0]))
        terms["reproj"] = L.reprojection_loss(pred.camera_mesh, safe_v, pred.camera_joints, safe_j,
                                              np.repeat(batch.intr, 2, axis=0), w, B)
    if weights.w_smooth > 0:
        terms["smooth"] = L.smooth_loss(pred.mesh_full, gt_v_al, topo.faces, w, B)
    return L.total_loss(terms, weights)


def prediction_arrays(out: Outputs) -> dict[str, np.ndarray]:
    """Camera-frame numpy arrays in the (B, 2, ...) layout."""
    p = out.pred
    return {
        "vertices": p.camera_mesh.data.reshape(-1, 2, p.mesh_full.shape[1], 3).astype(np.float64),
        "joints": p.camera_joints.data.reshape(-1, 2, p.joints.shape[1], 3).astype(np.float64),
        "root": p.root.data.reshape(-1, 2, 3).astype(np.float64),
    }
