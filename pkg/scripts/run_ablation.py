"""Ablation trend check: pdfnet vs concat (no FTN) vs rgb_only.

Generates a 64-sample train / 16-sample test split once, trains every mode
under the same step budget for each seed, then evaluates all checkpoints of a
seed in one ``handfusion eval`` call (the printed table is the report).
Writes results/ablation.json with the test MPJPE per seed, mode and mask mode.

Each training run is a separate process so its memory is returned before the
next one starts.
"""

import argparse
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
MODES = ("pdfnet", "concat", "rgb_only")


def sh(*args: str) -> None:
    print("$ handfusion", " ".join(args), flush=True)
    subprocess.run([sys.executable, "-m", "handfusion.cli", *args], check=True)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=800)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--data-seed", type=int, default=100)
    ap.add_argument("--work", default=str(ROOT / "runs" / "ablation"))
    ap.add_argument("--out", default=str(ROOT / "results" / "ablation.json"))
    args = ap.parse_args()

    work = Path(args.work)
    train_dir, test_dir = work / "data" / "train", work / "data" / "test"
    if not (train_dir / "manifest.json").exists():
        sh("gen-data", "--out", str(train_dir), "--count", "64", "--seed", str(args.data_seed))
    if not (test_dir / "manifest.json").exists():
        sh("gen-data", "--out", str(test_dir), "--count", "16", "--start", "64", "--seed", str(args.data_seed))

    batch, n_train = 4, 64
    epochs = args.steps * batch // n_train
    cfg = {"train": {"batch_size": batch, "lr": args.lr, "epochs": epochs, "lr_drop_epoch": int(0.75 * epochs),
                     "augment": True, "eval_every": epochs, "checkpoint_every": epochs},
           "paths": {"train_data": str(train_dir)}}
    cfg_path = work / "config.json"
    cfg_path.write_text(json.dumps(cfg, indent=1))

    report: dict = {"steps": args.steps, "lr": args.lr, "data_seed": args.data_seed, "seeds": {}}
    for seed in args.seeds:
        ckpts = []
        for mode in MODES:
            run = work / f"seed{seed}" / mode
            ckpt = run / "last.ckpt"
            if not ckpt.exists():
                t0 = time.perf_counter()
                sh("train", "--config", str(cfg_path), "--out", str(run), "--seed", str(seed), "--ablation", mode)
                (run / "seconds.txt").write_text(f"{time.perf_counter() - t0:.1f}\n")
            ckpts.append(ckpt)
        metrics_path = work / f"seed{seed}" / "test_metrics.json"
        eval_args = ["eval", "--data", str(test_dir), "--mask", "both", "--out", str(metrics_path)]
        for mode, ckpt in zip(MODES, ckpts):
            eval_args += ["--checkpoint", str(ckpt), "--label", mode]
        sh(*eval_args)
        metrics = json.loads(metrics_path.read_text())
        entry = {}
        for mask in ("pred", "GT"):
            mp = {m: float(np.mean([h["MPJPE"] for h in metrics[f"{m} [{mask} mask]"]["per_hand"].values()]))
                  for m in MODES}
            entry[f"{mask} mask"] = {"MPJPE": mp,
                                     "pdfnet_beats_rgb_only": mp["pdfnet"] < mp["rgb_only"],
                                     "pdfnet_beats_concat": mp["pdfnet"] < mp["concat"]}
        entry["table"] = metrics
        report["seeds"][str(seed)] = entry
        print(json.dumps({k: v for k, v in entry.items() if k != "table"}, indent=1), flush=True)

    for mask in ("pred", "GT"):
        wins = sum(e[f"{mask} mask"]["pdfnet_beats_rgb_only"] and e[f"{mask} mask"]["pdfnet_beats_concat"]
                   for e in report["seeds"].values())
        report[f"{mask} mask seeds with strict ordering"] = int(wins)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(report, indent=1))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
