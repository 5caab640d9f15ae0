"""Command-line entry point: ``handfusion <command> [flags]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
3 gradient check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatch, ConfigError, ContractError, HandFusionError, ParseError, TopologyError

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_ACCEPTANCE = 0, 1, 2, 3

ABLATIONS = {
    "pdfnet": {"mode": "pdfnet", "ftn": True},
    "concat": {"mode": "concat", "ftn": False},
    "rgb_only": {"mode": "rgb_only"},
    "depth_only": {"mode": "depth_only"},
    "no_center": {"mode": "pdfnet", "center_feature": False},
}


def _overrides(args) -> dict:
    out: dict = {}
    if getattr(args, "seed", None) is not None:
        out["seed"] = args.seed
    if getattr(args, "ablation", None):
        out["fusion"] = dict(ABLATIONS[args.ablation])
    return out


def cmd_train(args) -> int:
    from .config import load_config
    from .train import train

    overrides = _overrides(args)
    if args.max_steps is not None:
        overrides.setdefault("train", {})["max_steps"] = args.max_steps
    cfg = load_config(args.config, overrides).validate(check_paths=True)
    out = args.out or cfg.paths.out_dir
    res = train(cfg, out_dir=out, resume=args.resume)
    print(f"finished at epoch {res.state.epoch}, step {res.state.step}; best AL-MPJPE {res.state.best:.3f} mm")
    print(f"checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoints import load_run
    from .config import load_config
    from .evaluate import evaluate, format_table, results_to_dict
    from .train import load_samples

    if not args.checkpoint:
        raise ConfigError("eval needs at least one --checkpoint")
    results = {}
    for path in args.checkpoint:
        net, _, _ = load_run(path)
        data = args.data or (load_config(args.config).paths.val_data if args.config else net.cfg.paths.val_data)
        if not data:
            raise ConfigError("no dataset: pass --data or set paths.val_data")
        samples = load_samples(data, net.cfg, net.topo)
        label = args.label.pop(0) if args.label else Path(path).parent.name or Path(path).stem
        modes = {"gt": [True], "pred": [False], "both": [True, False]}[args.mask]
        for gm in modes:
            results[f"{label} [{'GT' if gm else 'pred'} mask]"] = evaluate(net, samples, net.cfg.train.batch_size,
                                                                        gt_mask=gm)
    print(format_table(results))
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(results_to_dict(results), indent=1))
    return EXIT_OK


def cmd_infer(args) -> int:
    from .checkpoints import load_run
    from .infer import export, predict, read_depth, read_intrinsics, read_rgb

    net, _, _ = load_run(args.checkpoint)
    rgb = read_rgb(args.rgb)
    depth = read_depth(args.depth) if args.depth else None
    results = predict(net, rgb, depth, read_intrinsics(args.intrinsics))
    body = export(results, net, args.out)
    for hand, entry in body.items():
        if entry["detected"]:
            print(f"{hand}: root {np.round(entry['root'], 4).tolist()} -> {Path(args.out) / entry['obj']}")
        else:
            print(f"{hand}: {entry['error']}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from .data.synthetic import SceneConfig, generate_synthetic

    names = generate_synthetic(args.seed or 0, args.count, args.out, SceneConfig(resolution=args.resolution),
                               start=args.start)
    print(f"wrote {len(names)} samples to {args.out}")
    return EXIT_OK


def cmd_check_grad(args) -> int:
    from .gradsuite import format_report, run_suite

    reports = run_suite(seeds=args.seeds, names=set(args.only) if args.only else None, fault=args.inject_fault)
    print(format_report(reports))
    failed = [r.name for r in reports if not r.passed]
    total = sum(r.seconds for r in reports)
    print(f"{len(reports) - len(failed)}/{len(reports)} passed in {total:.1f} s")
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def _read_regressor(path: str, n_verts: int) -> tuple[np.ndarray, int | None]:
    """JSON with either a dense ``regressor`` (J x V) or sparse ``joints``: [[[vertex, weight], ...], ...]."""
    try:
        body = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(path, str(exc)) from exc
    if "regressor" in body:
        reg = np.asarray(body["regressor"], dtype=np.float64)
    elif "joints" in body:
        reg = np.zeros((len(body["joints"]), n_verts))
        for j, row in enumerate(body["joints"]):
            for v, w in row:
                reg[j, int(v)] = float(w)
    else:
        raise ParseError(f"{path}:regressor", "missing (or give 'joints')")
    if reg.ndim != 2 or reg.shape[1] != n_verts:
        raise ParseError(f"{path}:regressor", f"shape {reg.shape} does not match {n_verts} vertices")
    return reg, body.get("root_joint")


def cmd_make_topology(args) -> int:
    from .infer import read_obj
    from .topology import build_topology, hand_topology, save_topology

    if args.mesh:
        if not args.joints:
            raise ConfigError("--mesh needs --joints")
        verts, faces = read_obj(args.mesh)
        reg, root = _read_regressor(args.joints, len(verts))
        sizes = tuple(args.sizes) if args.sizes else None
        topo = build_topology(verts, faces, reg, sizes=sizes) if sizes else build_topology(verts, faces, reg)
        if root is not None:
            topo.root_joint = int(root)
    else:
        topo = hand_topology()
    digest = save_topology(topo, args.out)
    print(f"wrote {args.out} (levels {topo.level_sizes}, sha256 {digest})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="handfusion", description="Two-hand mesh recovery from RGB-D.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON run configuration")
    t.add_argument("--out", help="output directory (default paths.out_dir)")
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=sorted(ABLATIONS))
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--max-steps", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate one or more checkpoints")
    e.add_argument("--checkpoint", action="append", default=[])
    e.add_argument("--label", action="append", default=[], help="row label per checkpoint")
    e.add_argument("--config", help="configuration supplying paths.val_data")
    e.add_argument("--data", help="dataset directory")
    e.add_argument("--mask", choices=("gt", "pred", "both"), default="both")
    e.add_argument("--out", help="write metrics JSON here")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="reconstruct hands in one RGB-D frame")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--rgb", required=True)
    i.add_argument("--depth", help="16-bit millimeter PNG")
    i.add_argument("--intrinsics", required=True, help="fx,fy,cx,cy or a JSON file")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    g = sub.add_parser("gen-data", help="render a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=64)
    g.add_argument("--start", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--resolution", type=int, default=192)
    g.set_defaults(func=cmd_gen_data)

    c = sub.add_parser("check-grad", help="finite-difference gradient suite")
    c.add_argument("--seeds", type=int, default=20)
    c.add_argument("--only", nargs="*", help="restrict to these case names")
    c.add_argument("--inject-fault", metavar="OP", help="corrupt the backward pass of OP (self-test)")
    c.set_defaults(func=cmd_check_grad)

    m = sub.add_parser("make-topology", help="build the mesh hierarchy asset")
    m.add_argument("--mesh", help="OBJ with the full mesh (default: built-in hand)")
    m.add_argument("--joints", help="JSON joint regressor for --mesh")
    m.add_argument("--sizes", type=int, nargs=3, help="coarse level sizes, coarsest first")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_make_topology)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, ContractError, TopologyError, CheckpointMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HandFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
