"""Training losses.

Tensors carry a leading instance axis n (one row per hand instance).  Each
per-instance term is weighted by the hand's presence flag and the sum is
divided by the number of images, so terms add over the two hands and average
over the batch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import Tensor, ops
from .errors import ContractError, DimensionError
from .geometry import project_tensor

EPS = 1e-6


@dataclass
class LossWeights:
    w_center: float = 1.0
    w_mask: float = 1.0
    w_root: float = 10.0
    w_mesh: float = 10.0
    w_joint: float = 10.0
    w_reproj: float = 0.01
    w_smooth: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ContractError(f"loss weight {name} must be >= 0, got {value}")


def center_loss(pred: Tensor, gt: np.ndarray, gamma: float = 2.0) -> Tensor:
    """Penalty-reduced focal loss over heatmaps, normalized by the positive count.

    Positive cells (gt == 1): -(1 - A)^gamma log A.
    Other cells: -(1 - gt)^4 A^gamma log(1 - A).
    """
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"heatmap shape {pred.shape} vs {gt.shape}")
    a = ops.clamp(pred, EPS, 1 - EPS)
    pos = (gt == 1).astype(pred.dtype)
    neg_w = ((1 - gt) ** 4 * (1 - pos)).astype(pred.dtype)
    pos_term = ops.mul(ops.mul(ops.power(ops.sub(1.0, a), gamma), ops.log(a)), pos)
    neg_term = ops.mul(ops.mul(ops.power(a, gamma), ops.log(ops.sub(1.0, a))), neg_w)
    total = ops.sum(ops.add(pos_term, neg_term))
    return ops.mul(total, -1.0 / max(float(pos.sum()), 1.0))


def mask_loss(pred: Tensor, gt: np.ndarray, delta: float = 1.0) -> Tensor:
    """Smooth-L1, mean over pixels and hands."""
    if pred.shape != np.shape(gt):
        raise DimensionError(f"mask shape {pred.shape} vs {np.shape(gt)}")
    return ops.smooth_l1_loss(pred, np.asarray(gt, dtype=pred.dtype), delta)


def _weights(weight, n: int, dtype) -> np.ndarray:
    return np.ones(n, dtype=dtype) if weight is None else np.asarray(weight, dtype=dtype)


def _per_instance(err: Tensor) -> Tensor:
    """Mean over every axis but the first."""
    return ops.mean(err, axis=tuple(range(1, err.ndim))) if err.ndim > 1 else err


def _weighted_sum(per: Tensor, weight: np.ndarray, n_images: int | None) -> Tensor:
    denom = n_images if n_images is not None else 1
    return ops.mul(ops.sum(ops.mul(per, weight)), 1.0 / denom)


def l1_term(pred: Tensor, gt, weight=None, n_images: int | None = None) -> Tensor:
    """sum_i w_i mean|pred_i - gt_i| / n_images."""
    gt = np.asarray(gt, dtype=pred.dtype)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape {pred.shape} vs {gt.shape}")
    per = _per_instance(ops.abs(ops.sub(pred, gt)))
    return _weighted_sum(per, _weights(weight, pred.shape[0], pred.dtype), n_images)


def root_loss(pred: Tensor, gt, weight=None, n_images=None) -> Tensor:
    return l1_term(pred, gt, weight, n_images)


def mesh_loss(pred_gcn: Tensor, pred_full: Tensor, gt_full, select: np.ndarray, weight=None,
              n_images=None) -> Tensor:
    """Coarse term against the GT restricted to the coarse vertices, plus the full term."""
    gt_full = np.asarray(gt_full)
    coarse = l1_term(pred_gcn, gt_full[:, select], weight, n_images)
    return ops.add(coarse, l1_term(pred_full, gt_full, weight, n_images))


def joint_loss(pred: Tensor, gt, weight=None, n_images=None) -> Tensor:
    return l1_term(pred, gt, weight, n_images)


def reprojection_loss(pred_mesh: Tensor, gt_mesh, pred_joints: Tensor, gt_joints, intr: np.ndarray,
                      weight=None, n_images=None) -> Tensor:
    """Mean squared pixel distance of projected camera-frame points, mesh + joints.

    ``intr`` is (n, 4) rows of (fx, fy, cx, cy).
    """
    intr = np.asarray(intr, dtype=np.float64)
    fx, fy, cx, cy = (intr[:, i][:, None] for i in range(4))
    total = None
    for pred, gt in ((pred_mesh, gt_mesh), (pred_joints, gt_joints)):
        gt = np.asarray(gt, dtype=np.float64)
        if pred.shape != gt.shape:
            raise DimensionError(f"shape {pred.shape} vs {gt.shape}")
        uv = project_tensor(pred, fx, fy, cx, cy)
        # same operation order as project_tensor so identical inputs give identical pixels
        gt_uv = np.stack([gt[..., 0] / gt[..., 2] * fx + cx, gt[..., 1] / gt[..., 2] * fy + cy], axis=-1)
        sq = ops.sum(ops.square(ops.sub(uv, gt_uv.astype(pred.dtype))), axis=-1)
        term = _weighted_sum(_per_instance(sq), _weights(weight, pred.shape[0], pred.dtype), n_images)
        total = term if total is None else ops.add(total, term)
    return total


def _take(mesh: Tensor, idx: np.ndarray) -> Tensor:
    """mesh[:, idx] through the sparse-backward gather."""
    return ops.batched_gather(mesh, np.broadcast_to(idx, (mesh.shape[0], len(idx))))


def _edge_len(e) -> Tensor:
    return ops.sqrt(ops.add(ops.sum(ops.square(e), axis=-1), 1e-12))


def smooth_loss(pred_mesh: Tensor, gt_mesh, faces: np.ndarray, weight=None, n_images=None) -> Tensor:
    """Normal consistency against GT face normals plus edge-length agreement.

    Normal term: mean over faces of sum_i |e_i . n_gt| for the three predicted
    edges.  Edge term: mean over unique edges of |len(e) - len(e_gt)|.
    """
    gt = np.asarray(gt_mesh, dtype=np.float64)
    faces = np.asarray(faces)
    if pred_mesh.shape != gt.shape:
        raise DimensionError(f"shape {pred_mesh.shape} vs {gt.shape}")
    g0, g1, g2 = gt[:, faces[:, 0]], gt[:, faces[:, 1]], gt[:, faces[:, 2]]
    normal = np.cross(g1 - g0, g2 - g0)
    normal /= np.maximum(np.linalg.norm(normal, axis=-1, keepdims=True), 1e-12)
    normal = normal.astype(pred_mesh.dtype)
    p = [_take(pred_mesh, faces[:, k]) for k in range(3)]
    ntot = None
    for a, b in ((0, 1), (1, 2), (2, 0)):
        dot = ops.abs(ops.sum(ops.mul(ops.sub(p[b], p[a]), normal), axis=-1))
        ntot = dot if ntot is None else ops.add(ntot, dot)
    edges = np.unique(np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1), axis=0)
    pe = ops.sub(_take(pred_mesh, edges[:, 1]), _take(pred_mesh, edges[:, 0]))
    ge = gt[:, edges[:, 1]] - gt[:, edges[:, 0]]
    glen = np.sqrt((ge ** 2).sum(-1) + 1e-12).astype(pred_mesh.dtype)
    elen = ops.abs(ops.sub(_edge_len(pe), glen))
    w = _weights(weight, pred_mesh.shape[0], pred_mesh.dtype)
    return ops.add(_weighted_sum(_per_instance(ntot), w, n_images), _weighted_sum(_per_instance(elen), w, n_images))


TERMS = ("center", "mask", "root", "mesh", "joint", "reproj", "smooth")


def total_loss(terms: dict[str, Tensor], weights: LossWeights) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of the available terms and their float values for logging."""
    total = None
    logged = {}
    for name in TERMS:
        if name not in terms:
            continue
        value = terms[name]
        logged[name] = float(value.data)
        w = getattr(weights, f"w_{name}")
        scaled = ops.mul(value, w)
        total = scaled if total is None else ops.add(total, scaled)
    if total is None:
        total = Tensor(np.zeros(()))
    logged["total"] = float(total.data)
    return total, logged
