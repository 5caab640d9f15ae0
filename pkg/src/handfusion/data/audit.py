"""Projection consistency audit: do projected joints land on their hand's mask?"""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..geometry import project
from .io import Sample

BAND_PX = 10.0


def hull_distance(uv: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Pixel distance from each (u, v) to the convex hull of the mask pixels (0 inside)."""
    v, u = np.nonzero(mask)
    pts = np.stack([u, v], axis=1).astype(np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    try:
        hull = ConvexHull(pts)
    except (QhullError, ValueError):
        # fewer than three pixels or collinear: distance to the nearest pixel
        if len(pts) == 0:
            return np.full(len(uv), np.inf)
        return np.linalg.norm(uv[:, None] - pts[None], axis=-1).min(axis=1)
    poly = hull.points[hull.vertices]
    inside = (uv @ hull.equations[:, :2].T + hull.equations[:, 2] <= 1e-9).all(axis=1)
    a, b = poly, np.roll(poly, -1, axis=0)
    e = b - a
    t = np.clip(((uv[:, None] - a[None]) * e[None]).sum(-1) / (e * e).sum(-1)[None], 0, 1)
    d = np.linalg.norm(uv[:, None] - (a[None] + t[..., None] * e[None]), axis=-1).min(axis=1)
    return np.where(inside, 0.0, d)


def joint_audit(sample: Sample, joints: dict[str, np.ndarray] | None = None, band: float = BAND_PX) -> tuple[int, int]:
    """(joints within ``band`` px of their mask hull, joints checked) over present hands.

    ``joints`` maps hand -> (21, 3) camera-frame joints; defaults to the GT.
    """
    inside = total = 0
    for hand, a in sample.hands.items():
        if not a.present or not a.mask.any():
            continue
        j = a.joints if joints is None else joints[hand]
        d = hull_distance(project(j, sample.intrinsics), a.mask)
        inside += int((d <= band).sum())
        total += len(d)
    return inside, total
