"""Depth map <-> point cloud conversions, projection and feature fetching.

Pixel convention: pixel (u, v) is column u, row v, and its center sits at the
integer coordinate, so ``back_project`` and ``project`` are exact inverses.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, ops
from .errors import ContractError, EmptyCloudError, ProjectionError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ContractError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy])

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    def check_image(self, height: int, width: int) -> None:
        if not (0 <= self.cx < width and 0 <= self.cy < height):
            raise ContractError(f"principal point ({self.cx}, {self.cy}) outside {width}x{height}")

    def scaled(self, s: float) -> "CameraIntrinsics":
        return replace(self, fx=self.fx * s, fy=self.fy * s, cx=self.cx * s, cy=self.cy * s)


@dataclass
class PointCloud:
    points: np.ndarray  # (N, 3) meters, camera frame
    pixel_index: np.ndarray  # (N, 2) integer (u, v)
    hand: str = "right"

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], self.pixel_index[idx], self.hand)


def back_project(depth: np.ndarray, mask: np.ndarray, intr: CameraIntrinsics, hand: str = "right") -> PointCloud:
    """Lift every masked pixel with positive depth to a camera-frame point."""
    sel = np.asarray(mask, dtype=bool) & (depth > 0)
    v, u = np.nonzero(sel)
    if u.size == 0:
        raise EmptyCloudError(f"{hand}: mask selects no pixel with depth")
    d = depth[v, u].astype(np.float64)
    pts = np.stack([(u - intr.cx) * d / intr.fx, (v - intr.cy) * d / intr.fy, d], axis=1)
    return PointCloud(pts, np.stack([u, v], axis=1).astype(np.int64), hand)


def filter_outliers(pc: PointCloud, band: float = 0.08) -> PointCloud:
    """Keep points whose depth lies within ``band`` of the mean depth."""
    if len(pc) == 0:
        raise EmptyCloudError(f"{pc.hand}: empty cloud")
    z = pc.points[:, 2]
    keep = np.abs(z - z.mean()) <= band
    if not keep.any():
        raise EmptyCloudError(f"{pc.hand}: every point rejected as outlier")
    return pc.subset(keep)


def sample_fixed(pc: PointCloud, n: int = 1024, seed=None) -> PointCloud:
    """Exactly ``n`` points: without replacement when possible, otherwise with."""
    if len(pc) == 0:
        raise EmptyCloudError(f"{pc.hand}: empty cloud")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if len(pc) >= n:
        idx = rng.permutation(len(pc))[:n]
    else:
        idx = rng.integers(0, len(pc), size=n)
    return pc.subset(idx)


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Continuous pixel coordinates (u, v) of camera-frame points."""
    points = np.asarray(points, dtype=np.float64)
    z = points[..., 2]
    if np.any(z <= 0):
        raise ProjectionError("cannot project points with z <= 0")
    return np.stack([intr.fx * points[..., 0] / z + intr.cx, intr.fy * points[..., 1] / z + intr.cy], axis=-1)


def project_tensor(points: Tensor, fx, fy, cx, cy) -> Tensor:
    """Differentiable projection of (..., M, 3) points.

    Intrinsics may be scalars or arrays broadcastable against (..., M).
    """
    z = points.data[..., 2]
    if np.any(z <= 0):
        raise ProjectionError("cannot project points with z <= 0")
    x, y, zt = ops.split(points, [1, 1, 1], axis=-1)
    dt = points.dtype

    def col(v):
        return np.asarray(v, dtype=dt)[..., None] if np.ndim(v) else np.asarray(v, dtype=dt)

    u = ops.add(ops.mul(ops.div(x, zt), col(fx)), col(cx))
    v = ops.add(ops.mul(ops.div(y, zt), col(fy)), col(cy))
    return ops.concat([u, v], axis=-1)


def _fetch_index(pix: np.ndarray, scale: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    u = np.clip(np.floor(pix[..., 0] / scale).astype(np.int64), 0, w - 1)
    v = np.clip(np.floor(pix[..., 1] / scale).astype(np.int64), 0, h - 1)
    return u, v


def fetch_features(fmap: Tensor, pix: np.ndarray, scale: int = 1, mode: str = "nearest") -> Tensor:
    """Gather per-point features from a (C, h, w) map at full-resolution pixels.

    ``nearest`` returns ``fmap[:, floor(v/s), floor(u/s)]`` with clamping.
    """
    C, h, w = fmap.shape
    out = fetch_features_batched(ops.reshape(fmap, (1, C, h, w)), np.asarray(pix)[None], np.zeros(1, np.int64), scale, mode)
    return ops.reshape(out, (len(pix), C))


def fetch_features_batched(fmaps: Tensor, pix: np.ndarray, image_of: np.ndarray, scale: int, mode: str = "nearest") -> Tensor:
    """Batched fetch.

    fmaps: (B, C, h, w); pix: (n, M, 2) full-resolution pixels; image_of: (n,)
    index of the feature map each point set reads from. Returns (n, M, C).
    """
    B, C, h, w = fmaps.shape
    table = ops.reshape(ops.transpose(fmaps, (0, 2, 3, 1)), (B * h * w, C))
    base = (np.asarray(image_of) * h * w)[:, None]
    if mode == "nearest":
        u, v = _fetch_index(pix, scale, h, w)
        return ops.gather_rows(table, base + v * w + u)
    if mode != "bilinear":
        raise ValueError(f"unknown fetch mode {mode!r}")
    # sample at the feature cell whose footprint covers the pixel center
    fu = np.clip((pix[..., 0] + 0.5) / scale - 0.5, 0, w - 1)
    fv = np.clip((pix[..., 1] + 0.5) / scale - 0.5, 0, h - 1)
    u0, v0 = np.floor(fu).astype(np.int64), np.floor(fv).astype(np.int64)
    u1, v1 = np.minimum(u0 + 1, w - 1), np.minimum(v0 + 1, h - 1)
    au, av = (fu - u0)[..., None], (fv - v0)[..., None]
    dt = fmaps.dtype
    out = None
    for uu, vv, wt in ((u0, v0, (1 - au) * (1 - av)), (u1, v0, au * (1 - av)),
                       (u0, v1, (1 - au) * av), (u1, v1, au * av)):
        term = ops.mul(ops.gather_rows(table, base + vv * w + uu), wt.astype(dt))
        out = term if out is None else ops.add(out, term)
    return out
