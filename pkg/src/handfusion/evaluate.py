"""Evaluation over a sample list and comparison tables."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .data.io import HANDS, Sample
from .metrics import average, hand_metrics
from .model import HandFusionNet, make_batch, prediction_arrays

METRIC_NAMES = ("MPJPE", "MPVPE", "AL-MPJPE", "AL-MPVPE")


@dataclass
class EvalResult:
    per_hand: dict[str, dict[str, float]]  # averages over samples where the hand is present
    rows: list[dict] = field(default_factory=list)  # one entry per (sample, hand)
    detection: dict[str, float] = field(default_factory=dict)  # fraction of peaks within 8 px of GT
    mask_iou: dict[str, float] = field(default_factory=dict)  # mean IoU of the predicted masks

    def mean(self, metric: str) -> float:
        vals = [m[metric] for m in self.per_hand.values() if m]
        return float(np.mean(vals)) if vals else float("nan")


def evaluate(net: HandFusionNet, samples: list[Sample], batch_size: int = 4, gt_mask: bool = False,
             gt_center: bool = False) -> EvalResult:
    """Run the network in inference mode; metrics in millimeters."""
    was_training = net.training
    net.eval()
    rows = []
    hits = {h: [] for h in HANDS}
    ious = {h: [] for h in HANDS}
    thr = net.cfg.model.mask_threshold
    try:
        with no_grad():
            for start in range(0, len(samples), batch_size):
                chunk = samples[start:start + batch_size]
                batch = make_batch(chunk, net.topo.root_joint)
                out = net(batch, gt_center=gt_center, gt_mask=gt_mask, cacheable=gt_mask)
                arr = prediction_arrays(out)
                for b, s in enumerate(chunk):
                    for k, hand in enumerate(HANDS):
                        a = s.hands[hand]
                        if not a.present:
                            continue
                        m = hand_metrics(arr["joints"][b, k], arr["vertices"][b, k], a.joints, a.vertices,
                                         net.topo.root_joint)
                        rows.append({"sample": s.name, "hand": hand, **m})
                        hits[hand].append(float(np.abs(out.peaks[b, k] - batch.gt_peaks[b, k]).max() <= 8))
                        pm, gm = out.masks.data[b, k] > thr, a.mask
                        ious[hand].append(float((pm & gm).sum() / max((pm | gm).sum(), 1)))
    finally:
        net.train(was_training)
    per_hand = {h: average([{k: r[k] for k in METRIC_NAMES} for r in rows if r["hand"] == h]) for h in HANDS}
    detection = {h: float(np.mean(v)) if v else float("nan") for h, v in hits.items()}
    mask_iou = {h: float(np.mean(v)) if v else float("nan") for h, v in ious.items()}
    return EvalResult(per_hand, rows, detection, mask_iou)


def format_table(results: dict[str, EvalResult]) -> str:
    """Fixed-width table: one row per (label, hand), metric columns in mm."""
    head = f"{'run':<28} {'hand':<6}" + "".join(f"{m:>11}" for m in METRIC_NAMES)
    lines = [head, "-" * len(head)]
    for label, res in results.items():
        for hand in HANDS:
            m = res.per_hand.get(hand) or {}
            cells = "".join(f"{m.get(k, float('nan')):>11.3f}" for k in METRIC_NAMES)
            lines.append(f"{label:<28} {hand:<6}{cells}")
    return "\n".join(lines)


def results_to_dict(results: dict[str, EvalResult]) -> dict:
    return {label: {"per_hand": r.per_hand, "detection": r.detection, "mask_iou": r.mask_iou} for label, r in results.items()}
