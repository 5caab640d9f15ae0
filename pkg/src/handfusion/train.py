"""Training loop: augmentation, step schedule, logging, checkpoints, resume."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Adam, backward
from .checkpoints import RunState, load_run, save_run
from .config import RunConfig
from .data.augment import AugmentRanges, augment, fit_resolution, sample_params
from .data.io import Sample, load_dataset
from .errors import TrainingDiverged
from .evaluate import evaluate
from .metrics import hand_metrics
from .model import HandFusionNet, compute_losses, make_batch, prediction_arrays
from .topology import MeshTopology, default_topology, load_topology

LOG_FIELDS = ("step", "epoch", "lr", "center", "mask", "root", "mesh", "joint", "reproj", "smooth", "total",
              "MPJPE", "AL-MPJPE", "seconds")


@dataclass
class TrainResult:
    net: HandFusionNet
    state: RunState
    out_dir: Path | None


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    t = cfg.train
    return t.lr * (t.lr_drop_factor if epoch >= t.lr_drop_epoch else 1.0)


def resolve_topology(cfg: RunConfig) -> MeshTopology:
    return load_topology(cfg.paths.topology) if cfg.paths.topology else default_topology()


def load_samples(path: str, cfg: RunConfig, topo: MeshTopology) -> list[Sample]:
    return [fit_resolution(s, cfg.model.resolution) for s in load_dataset(path, topo.regressor)]


def _batch_metrics(out, batch) -> tuple[float, float]:
    arr = prediction_arrays(out)
    rows = []
    for b in range(batch.n_images):
        for k in range(2):
            if batch.present[b, k]:
                rows.append(hand_metrics(arr["joints"][b, k], arr["vertices"][b, k],
                                         batch.gt_joints[b, k], batch.gt_verts[b, k]))
    if not rows:
        return float("nan"), float("nan")
    return float(np.mean([r["MPJPE"] for r in rows])), float(np.mean([r["AL-MPJPE"] for r in rows]))


def _dump_divergence(out_dir: Path | None, step: int, logged: dict, net: HandFusionNet) -> str:
    info = {"step": step, "terms": logged,
            "nonfinite_params": [n for n, p in net.named_parameters() if not np.all(np.isfinite(p.data))]}
    if out_dir is None:
        return json.dumps(info)
    path = out_dir / "divergence.json"
    path.write_text(json.dumps(info, indent=1))
    return str(path)


def train(cfg: RunConfig, train_samples: list[Sample] | None = None, val_samples: list[Sample] | None = None,
          out_dir: str | Path | None = None, resume: str | Path | None = None,
          topo: MeshTopology | None = None, log: Callable[[str], None] | None = print) -> TrainResult:
    """Train per ``cfg``; ``out_dir=None`` keeps everything in memory.

    Checkpoints: ``last.ckpt`` every ``checkpoint_every`` epochs and
    ``best.ckpt`` on the best validation AL-MPJPE (training set if no
    validation samples are given).
    """
    log = log or (lambda _msg: None)
    topo = topo or resolve_topology(cfg)
    if train_samples is None:
        train_samples = load_samples(cfg.paths.train_data, cfg, topo)
    if val_samples is None and cfg.paths.val_data:
        val_samples = load_samples(cfg.paths.val_data, cfg, topo)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(cfg.to_json())
    if resume is not None:
        net, opt, state = load_run(resume, topo, cfg, with_optimizer=True)
        log(f"resumed from {resume} at epoch {state.epoch}, step {state.step}")
    else:
        net = HandFusionNet(cfg, topo, np.random.default_rng(cfg.seed))
        opt = Adam(net.parameters(), lr=cfg.train.lr)
        state = RunState(history=[])
    net.train()
    t = cfg.train
    csv_file = None
    writer = None
    if out is not None:
        log_path = out / "train_log.csv"
        new_file = not log_path.exists() or resume is None
        csv_file = open(log_path, "w" if new_file else "a", newline="")
        writer = csv.DictWriter(csv_file, fieldnames=LOG_FIELDS)
        if new_file:
            writer.writeheader()
    ranges = AugmentRanges()
    eval_set = val_samples if val_samples else train_samples
    try:
        for epoch in range(state.epoch, t.epochs):
            if t.max_steps and state.step >= t.max_steps:
                break
            opt.lr = learning_rate(cfg, epoch)
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(len(train_samples))
            for start in range(0, len(order), t.batch_size):
                if t.max_steps and state.step >= t.max_steps:
                    break
                tic = time.perf_counter()
                chunk = [train_samples[i] for i in order[start:start + t.batch_size]]
                if t.augment:
                    chunk = [augment(s, sample_params(rng, s.width, s.height, ranges), rng) for s in chunk]
                batch = make_batch(chunk, topo.root_joint)
                outs = net(batch, gt_center=t.teacher_forcing, gt_mask=True, rng=rng, cacheable=not t.augment)
                loss, logged = compute_losses(outs, batch, topo, cfg.loss)
                if not math.isfinite(logged["total"]):
                    where = _dump_divergence(out, state.step, logged, net)
                    raise TrainingDiverged(f"non-finite loss at step {state.step}; dump: {where}")
                opt.zero_grad()
                backward(loss)
                opt.step()
                state.step += 1
                mpjpe, al = _batch_metrics(outs, batch)
                row = {"step": state.step, "epoch": epoch, "lr": opt.lr, **logged, "MPJPE": mpjpe,
                       "AL-MPJPE": al, "seconds": time.perf_counter() - tic}
                if writer is not None:
                    writer.writerow({k: row.get(k, "") for k in LOG_FIELDS})
                    csv_file.flush()
            state.epoch = epoch + 1
            last_epoch = state.epoch >= t.epochs or (t.max_steps and state.step >= t.max_steps)
            if state.epoch % t.eval_every == 0 or last_epoch:
                res = evaluate(net, eval_set, t.batch_size, gt_mask=True, gt_center=False)
                score = res.mean("AL-MPJPE")
                state.history.append({"epoch": state.epoch, "step": state.step, "AL-MPJPE": score,
                                      "MPJPE": res.mean("MPJPE")})
                log(f"epoch {state.epoch} step {state.step} loss {logged['total']:.4f} "
                    f"eval MPJPE {res.mean('MPJPE'):.2f} AL-MPJPE {score:.2f}")
                if score < state.best:
                    state.best = score
                    if out is not None:
                        save_run(out / "best.ckpt", net, opt, state)
            if out is not None and (state.epoch % t.checkpoint_every == 0 or last_epoch):
                save_run(out / "last.ckpt", net, opt, state)
    finally:
        if csv_file is not None:
            csv_file.close()
    return TrainResult(net, state, out)
