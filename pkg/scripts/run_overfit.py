"""Overfit check: full model on 8 synthetic samples at 192 px, at most 2000 steps.

Writes results/overfit.json with per-hand train-set metrics for both mask
modes (predicted centers throughout), mask IoU, wall time and a projection
audit of single-image inference on every training sample.
"""

import argparse
import json
import time
from pathlib import Path

from handfusion.checkpoints import load_run
from handfusion.config import RunConfig, TrainConfig
from handfusion.data.audit import joint_audit
from handfusion.data.synthetic import generate_in_memory
from handfusion.evaluate import evaluate, format_table
from handfusion.infer import predict
from handfusion.topology import default_topology

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--run-dir", default=str(ROOT / "runs" / "overfit"))
    ap.add_argument("--out", default=str(ROOT / "results" / "overfit.json"))
    ap.add_argument("--skip-train", action="store_true", help="re-evaluate <run-dir>/last.ckpt")
    args = ap.parse_args()

    topo = default_topology()
    samples = generate_in_memory(args.seed, 8, topo=topo)
    batch = 4
    epochs = args.steps * batch // len(samples)
    cfg = RunConfig(seed=args.seed, train=TrainConfig(
        batch_size=batch, lr=args.lr, epochs=epochs, lr_drop_epoch=int(0.75 * epochs), max_steps=args.steps,
        augment=False, eval_every=25, checkpoint_every=epochs))
    if args.skip_train:
        net, _, state = load_run(Path(args.run_dir) / "last.ckpt", topo)
        prev = json.loads(Path(args.out).read_text()) if Path(args.out).exists() else {}
        seconds, steps = prev.get("seconds", float("nan")), state.step
    else:
        from handfusion.train import train

        t0 = time.perf_counter()
        res = train(cfg, samples, out_dir=args.run_dir, topo=topo)
        seconds, steps, net = time.perf_counter() - t0, res.state.step, res.net
    evals = {"pred mask": evaluate(net, samples, batch, gt_mask=False),
             "GT mask": evaluate(net, samples, batch, gt_mask=True)}
    print(format_table(evals))
    inside = total = 0
    for sm in samples:
        hands = {r.hand: r.joints for r in predict(net, sm.rgb, sm.depth, sm.intrinsics) if r.detected}
        if len(hands) == 2:
            i, t = joint_audit(sm, hands)
            inside, total = inside + i, total + t
        else:
            total += 42
    print(f"inference audit: {inside}/{total} joints within 10 px of the GT mask hull")
    body = {
        "infer_audit": {"inside": inside, "total": total},
        "steps": steps, "seconds": seconds, "lr": args.lr, "seed": args.seed,
        "modes": {k: {"per_hand": v.per_hand, "mask_iou": v.mask_iou, "detection": v.detection}
                  for k, v in evals.items()},
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(body, indent=1))
    print(f"{steps} steps in {seconds / 60:.1f} min -> {args.out}")


if __name__ == "__main__":
    main()
