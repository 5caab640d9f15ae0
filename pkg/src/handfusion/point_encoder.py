"""Hierarchical point features: sampling, grouping, set abstraction, global PointNet."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, MLP, Module, Tensor, ops
from .errors import ContractError, DimensionError


def farthest_point_sample(points: np.ndarray, m: int, start: int | None = None) -> np.ndarray:
    """Greedy max-min subset of ``m`` indices.

    ``start`` defaults to the point with the largest depth (z).  Ties are
    broken by the lowest index.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if not 1 <= m <= n:
        raise DimensionError(f"cannot sample {m} of {n} points")
    if start is None:
        start = int(np.argmax(points[:, 2]))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    d = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(d))
        chosen[i] = nxt
        np.minimum(d, ((points - points[nxt]) ** 2).sum(axis=1), out=d)
    return chosen


def ball_query(centers: np.ndarray, points: np.ndarray, radius: float, k: int) -> np.ndarray:
    """(m, k) neighbor indices within ``radius``, in scan order.

    Short rows repeat their first hit; rows with no hit use the nearest point.
    """
    if radius <= 0 or k < 1:
        raise ContractError("ball_query needs radius > 0 and k >= 1")
    d2 = ((centers[:, None, :] - points[None, :, :]) ** 2).sum(-1)
    inside = d2 <= radius * radius
    order = np.argsort(~inside, axis=1, kind="stable")[:, :k]
    if order.shape[1] < k:
        order = np.concatenate([order, np.repeat(order[:, :1], k - order.shape[1], axis=1)], axis=1)
    count = inside.sum(axis=1)
    first = np.where(count > 0, order[:, 0], np.argmin(d2, axis=1))
    slot = np.arange(k)[None, :]
    return np.where(slot < count[:, None], order, first[:, None])


@dataclass
class GroupingPlan:
    """Index structure for one abstraction level (batched over n clouds)."""

    centers: np.ndarray  # (n, m) indices of the surviving centers
    neighbors: np.ndarray  # (n, m, K) ball-query indices
    rel: np.ndarray  # (n, m, K, 3) neighbor offsets from their center


def plan_level(xyz: np.ndarray, m: int, radius: float, k: int) -> GroupingPlan:
    """FPS + ball query for a batch of clouds ``xyz`` (n, N, 3)."""
    n = xyz.shape[0]
    centers = np.stack([farthest_point_sample(xyz[i], m) for i in range(n)])
    cxyz = np.take_along_axis(xyz, centers[..., None], axis=1)
    nbr = np.stack([ball_query(cxyz[i], xyz[i], radius, k) for i in range(n)])
    grouped = xyz[np.arange(n)[:, None, None], nbr]
    return GroupingPlan(centers, nbr, grouped - cxyz[:, :, None, :])


class SetAbstraction(Module):
    """Group, shared MLP to ``width`` channels, max-pool, concat with the center feature."""

    def __init__(self, c_in: int, rng: np.random.Generator, width: int = 128):
        super().__init__()
        self.c_in, self.width = c_in, width
        self.layer = Linear(3 + c_in, width, rng)

    def forward(self, feats: Tensor, plan: GroupingPlan, center_feats: Tensor | None = None) -> Tensor:
        """feats, center_feats: (n, N, C_in) -> (n, m, C_in + width).

        ``feats`` are grouped; ``center_feats`` (defaulting to ``feats``) are the
        features concatenated at each surviving center.
        """
        if feats.shape[-1] != self.c_in:
            raise DimensionError(f"expected {self.c_in} channels, got {feats.shape[-1]}")
        w = self.layer.weight
        w_rel, w_feat = ops.split(w, [3, self.c_in], axis=0)
        # the first layer is linear, so apply it per source point before grouping
        per_point = ops.matmul(feats, w_feat)
        grouped = ops.batched_gather(per_point, plan.neighbors)
        rel = ops.matmul(Tensor(plan.rel.astype(feats.dtype)), w_rel)
        h = ops.relu(ops.add(ops.add(grouped, rel), self.layer.bias))
        pooled = ops.max(h, axis=2)
        base = feats if center_feats is None else center_feats
        return ops.concat([ops.batched_gather(base, plan.centers), pooled], axis=-1)


class PointNetGlobal(Module):
    """Shared per-point MLP followed by a max-pool over points."""

    def __init__(self, c_in: int, rng: np.random.Generator, hidden: int = 256, out: int = 1024):
        super().__init__()
        self.mlp = MLP([c_in, hidden, out], rng, final_relu=True)

    def forward(self, feats: Tensor) -> Tensor:
        if feats.shape[-2] < 1:
            raise ContractError("pointnet_global needs at least one point")
        return ops.max(self.mlp(feats), axis=-2)


def set_abstraction(points: np.ndarray, feats: Tensor, m: int, radius: float, k: int,
                    module: SetAbstraction) -> tuple[np.ndarray, Tensor]:
    """Single-cloud convenience wrapper: returns (centers (m, 3), feats (m, C_in + width))."""
    plan = plan_level(np.asarray(points)[None], m, radius, k)
    out = module(ops.reshape(feats, (1,) + feats.shape), plan)
    return np.asarray(points)[plan.centers[0]], ops.reshape(out, out.shape[1:])
