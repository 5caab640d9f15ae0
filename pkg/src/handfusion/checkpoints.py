"""Saving and restoring networks, optimizer state and run metadata."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Adam
from .autodiff import checkpoint as ckpt
from .config import RunConfig, config_from_json
from .errors import CheckpointMismatch
from .model import HandFusionNet
from .topology import MeshTopology, default_topology, load_topology


@dataclass
class RunState:
    epoch: int = 0  # epochs completed
    step: int = 0
    best: float = float("inf")
    history: list | None = None


def save_run(path: str | Path, net: HandFusionNet, opt: Adam | None, state: RunState) -> None:
    records = {f"param.{k}": v for k, v in net.state_dict().items()}
    if opt is not None:
        records.update({f"adam.{k}": v for k, v in opt.state_dict().items()})
    records["meta.config"] = ckpt.encode_text(json.dumps(net.cfg.to_dict(), sort_keys=True))
    records["meta.topology"] = ckpt.encode_text(net.topo.digest)
    records["meta.state"] = ckpt.encode_text(json.dumps(
        {"epoch": state.epoch, "step": state.step, "best": state.best, "history": state.history or []}))
    records["meta.lr"] = np.array([opt.lr if opt is not None else 0.0])
    ckpt.save(path, records)


def read_config(records: dict) -> RunConfig:
    return config_from_json(ckpt.decode_text(records["meta.config"]))


def load_run(path: str | Path, topo: MeshTopology | None = None, cfg: RunConfig | None = None,
             with_optimizer: bool = False):
    """Rebuild the network (and optionally Adam) from a checkpoint.

    Returns (net, opt or None, RunState).  The topology digest stored in the
    checkpoint must match the topology in use.
    """
    records = ckpt.load(path)
    cfg = cfg or read_config(records)
    if topo is None:
        topo = load_topology(cfg.paths.topology) if cfg.paths.topology else default_topology()
    stored = ckpt.decode_text(records["meta.topology"])
    if stored != topo.digest:
        raise CheckpointMismatch(f"{path}: checkpoint topology {stored[:12]} != current {topo.digest[:12]}")
    net = HandFusionNet(cfg, topo)
    params = {k[len("param."):]: v for k, v in records.items() if k.startswith("param.")}
    try:
        net.load_state_dict(params)
    except (KeyError, ValueError) as exc:
        raise CheckpointMismatch(f"{path}: {exc}") from exc
    opt = None
    if with_optimizer:
        opt = Adam(net.parameters(), lr=float(records["meta.lr"][0]))
        adam = {k[len("adam."):]: v for k, v in records.items() if k.startswith("adam.")}
        if adam:
            opt.load_state_dict(adam)
    body = json.loads(ckpt.decode_text(records["meta.state"]))
    state = RunState(body["epoch"], body["step"], body["best"], body.get("history", []))
    return net, opt, state
