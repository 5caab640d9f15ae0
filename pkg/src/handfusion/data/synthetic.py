"""Synthetic two-hand RGB-D scenes with exact ground truth."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import handmodel
from ..geometry import CameraIntrinsics
from ..topology import MeshTopology, default_topology
from .io import HANDS, HandAnnotation, Sample, save_sample, write_manifest
from .render import rasterize, shade

SKIN_TONES = np.array([[224, 172, 140], [198, 134, 100], [141, 85, 54], [240, 200, 170], [170, 110, 80]], dtype=np.float64)


@dataclass
class SceneConfig:
    resolution: int = 192
    depth_range: tuple[float, float] = (0.3, 0.8)
    focal_ratio: tuple[float, float] = (0.85, 0.95)
    tilt_deg: float = 30.0
    background_depth: tuple[float, float] = (1.0, 1.3)
    min_visible: float = 0.5
    margin: int = 2
    max_tries: int = 200


def _rot(axis: int, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    r = np.eye(3)
    r[i, i], r[i, j], r[j, i], r[j, j] = c, -s, s, c
    return r


def random_rotation(rng: np.random.Generator, max_deg: float) -> np.ndarray:
    a = np.deg2rad(rng.uniform(-max_deg, max_deg, size=3))
    return _rot(2, a[2]) @ _rot(1, a[1]) @ _rot(0, a[0])


def posed_hand(rng: np.random.Generator, hand: str, cfg: SceneConfig, topo: MeshTopology,
               root_cam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Random articulation and orientation, root joint moved to ``root_cam``."""
    verts, _ = handmodel.pose_hand(handmodel.random_pose(rng))
    if hand == "left":
        verts = handmodel.mirror(verts)
    verts = verts @ random_rotation(rng, cfg.tilt_deg).T
    joints = topo.regressor @ verts
    shift = root_cam - joints[topo.root_joint]
    return verts + shift, joints + shift


def _background(rng: np.random.Generator, h: int, w: int, cfg: SceneConfig) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    c0, c1 = rng.uniform(0, 255, size=(2, 3))
    t = (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    t = (t - t.min()) / max(np.ptp(t), 1e-9)
    rgb = c0[None, None] * (1 - t[..., None]) + c1[None, None] * t[..., None]
    rgb += rng.normal(0, 6, size=rgb.shape)
    z0 = rng.uniform(*cfg.background_depth)
    depth = z0 + 0.1 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    return rgb, depth


def generate_sample(seed: int, index: int, cfg: SceneConfig | None = None,
                    topo: MeshTopology | None = None) -> Sample:
    """One scene, fully determined by (seed, index)."""
    cfg = cfg or SceneConfig()
    topo = topo or default_topology()
    rng = np.random.default_rng([seed, index])
    W = H = cfg.resolution
    f = rng.uniform(*cfg.focal_ratio) * W
    intr = CameraIntrinsics(f, f, W / 2.0, H / 2.0)
    faces = topo.faces
    u_ranges = {"left": (0.2 * W, 0.45 * W), "right": (0.55 * W, 0.8 * W)}
    for _ in range(cfg.max_tries):
        hands = {}
        ok = True
        for hand in HANDS:
            z = rng.uniform(*cfg.depth_range)
            u, v = rng.uniform(*u_ranges[hand]), rng.uniform(0.4 * H, 0.7 * H)
            root = np.array([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z])
            verts, joints = posed_hand(rng, hand, cfg, topo, root)
            uv = verts[:, :2] / verts[:, 2:] * f + np.array([intr.cx, intr.cy])
            if verts[:, 2].min() <= 0.05 or uv.min() < cfg.margin or uv.max() > W - 1 - cfg.margin:
                ok = False
                break
            hands[hand] = (verts, joints)
        if not ok:
            continue
        meshes = [(hands[h][0], faces) for h in HANDS]
        buf = rasterize(meshes, intr, H, W)
        alone = [np.count_nonzero(np.isfinite(rasterize([m], intr, H, W).depth)) for m in meshes]
        visible = [np.count_nonzero(buf.mesh_id == m) for m in range(2)]
        if all(a > 0 and v >= cfg.min_visible * a for a, v in zip(alone, visible)):
            break
    else:
        raise RuntimeError(f"could not place two visible hands for sample ({seed}, {index})")
    bg_rgb, bg_depth = _background(rng, H, W, cfg)
    colors = SKIN_TONES[rng.integers(0, len(SKIN_TONES), size=2)] * rng.uniform(0.85, 1.1, size=(2, 1))
    rgb = shade(buf, meshes, colors, bg_rgb)
    depth = np.where(np.isfinite(buf.depth), buf.depth, bg_depth)
    depth = np.rint(depth * 1000.0) / 1000.0  # the stored format is integer millimeters
    annos = {
        h: HandAnnotation(True, hands[h][0], hands[h][1], buf.mesh_id == m) for m, h in enumerate(HANDS)
    }
    return Sample(np.rint(rgb).astype(np.uint8).transpose(2, 0, 1).copy(), depth, intr, annos,
                  name=f"{index:06d}")


def generate_synthetic(seed: int, count: int, out_dir: str | Path, cfg: SceneConfig | None = None,
                       topo: MeshTopology | None = None, start: int = 0) -> list[str]:
    """Write ``count`` samples and a manifest; returns the sample names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    topo = topo or default_topology()
    cfg = cfg or SceneConfig()
    names = []
    for i in range(start, start + count):
        s = generate_sample(seed, i, cfg, topo)
        save_sample(s, out / s.name)
        names.append(s.name)
    write_manifest(out, names, topo.digest, seed=seed, resolution=cfg.resolution)
    return names


def generate_in_memory(seed: int, count: int, cfg: SceneConfig | None = None,
                       topo: MeshTopology | None = None, start: int = 0) -> list[Sample]:
    topo = topo or default_topology()
    return [generate_sample(seed, i, cfg, topo) for i in range(start, start + count)]
