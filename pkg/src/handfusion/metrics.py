"""Evaluation metrics in millimeters.

Inputs are camera-frame coordinates in meters.  Aligned variants translate
prediction and ground truth so that their own root joints sit at the origin.
Reported values are rounded to 1e-9 mm, far below any meaningful precision,
so that exact geometric identities (a pure translation has zero aligned
error) are not obscured by float64 rounding of the inputs.
"""

from __future__ import annotations

import numpy as np

from .handmodel import ROOT_JOINT

MM = 1000.0
DECIMALS = 9


def _mean_dist(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b, axis=-1).mean() * MM)


def hand_metrics(pred_joints, pred_verts, gt_joints, gt_verts, root: int = ROOT_JOINT) -> dict[str, float]:
    """MPJPE, MPVPE, AL-MPJPE, AL-MPVPE for one hand (or a stack of instances)."""
    pj, pv = np.asarray(pred_joints, np.float64), np.asarray(pred_verts, np.float64)
    gj, gv = np.asarray(gt_joints, np.float64), np.asarray(gt_verts, np.float64)
    # the aligned error is the raw error minus the root's raw error
    dj, dv = pj - gj, pv - gv
    droot = dj[..., root:root + 1, :]
    zero = np.zeros(1)
    out = {
        "MPJPE": _mean_dist(dj, zero),
        "MPVPE": _mean_dist(dv, zero),
        "AL-MPJPE": _mean_dist(dj, droot),
        "AL-MPVPE": _mean_dist(dv, droot),
    }
    return {k: round(v, DECIMALS) for k, v in out.items()}


def metrics(pred: dict, gt: dict, root: int = ROOT_JOINT) -> dict[str, dict[str, float]]:
    """Per-hand metrics.

    ``pred`` and ``gt`` map hand name to ``{"joints": (..., 21, 3), "vertices": (..., 778, 3)}``.
    """
    return {
        hand: hand_metrics(pred[hand]["joints"], pred[hand]["vertices"], gt[hand]["joints"], gt[hand]["vertices"], root)
        for hand in gt if hand in pred
    }


def average(rows: list[dict[str, float]]) -> dict[str, float]:
    if not rows:
        return {}
    return {k: round(float(np.mean([r[k] for r in rows])), DECIMALS) for k in rows[0]}
