"""Single-image inference with OBJ and JSON export."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .autodiff import no_grad
from .data.augment import fit_resolution
from .data.io import HANDS, HandAnnotation, Sample
from .errors import ContractError, ParseError
from .geometry import CameraIntrinsics
from .handmodel import NUM_JOINTS, NUM_VERTS
from .model import HandFusionNet, make_batch, prediction_arrays


@dataclass
class HandResult:
    hand: str
    detected: bool
    confidence: float
    root: np.ndarray | None = None  # (3,) camera frame, meters
    joints: np.ndarray | None = None  # (21, 3)
    vertices: np.ndarray | None = None  # (778, 3)


def read_rgb(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("RGB")).transpose(2, 0, 1).copy()
    except (OSError, FileNotFoundError) as exc:
        raise ParseError(str(path), f"cannot read RGB image ({exc})") from exc


def read_depth(path: str | Path) -> np.ndarray:
    """16-bit millimeter PNG to meters."""
    try:
        with Image.open(path) as im:
            raw = np.array(im)
    except (OSError, FileNotFoundError) as exc:
        raise ParseError(str(path), f"cannot read depth image ({exc})") from exc
    if raw.ndim != 2:
        raise ParseError(str(path), f"depth must be single channel, got shape {raw.shape}")
    return raw.astype(np.float64) / 1000.0


def read_intrinsics(spec: str) -> CameraIntrinsics:
    """Either ``fx,fy,cx,cy`` or a JSON file holding those keys (optionally under "intrinsics")."""
    parts = spec.split(",")
    if len(parts) == 4:
        try:
            return CameraIntrinsics(*(float(p) for p in parts))
        except ValueError as exc:
            raise ParseError("intrinsics", str(exc)) from exc
    try:
        body = json.loads(Path(spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError("intrinsics", f"expected fx,fy,cx,cy or a JSON file ({exc})") from exc
    body = body.get("intrinsics", body)
    try:
        return CameraIntrinsics(*(float(body[k]) for k in ("fx", "fy", "cx", "cy")))
    except KeyError as exc:
        raise ParseError(f"intrinsics.{exc.args[0]}", "missing") from exc


def _empty_hand(h: int, w: int) -> HandAnnotation:
    return HandAnnotation(False, np.zeros((NUM_VERTS, 3)), np.zeros((NUM_JOINTS, 3)), np.zeros((h, w), dtype=bool))


def predict(net: HandFusionNet, rgb: np.ndarray, depth: np.ndarray | None, intr: CameraIntrinsics) -> list[HandResult]:
    """Run the network on one RGB(-D) frame with predicted centers and masks."""
    if depth is None:
        if net.fusion.uses_points:
            raise ContractError(f"fusion mode {net.fusion.mode!r} needs a depth map; only rgb_only runs without one")
        depth = np.zeros(rgb.shape[1:])
    if depth.shape != rgb.shape[1:]:
        raise ContractError(f"depth {depth.shape} and rgb {rgb.shape[1:]} sizes differ")
    intr.check_image(*depth.shape)
    h, w = depth.shape
    sample = Sample(rgb, depth, intr, {k: _empty_hand(h, w) for k in HANDS}, "input")
    sample = fit_resolution(sample, net.cfg.model.resolution)
    batch = make_batch([sample], net.topo.root_joint)
    was_training = net.training
    net.eval()
    try:
        with no_grad():
            out = net(batch, gt_center=False, gt_mask=False)
    finally:
        net.train(was_training)
    arr = prediction_arrays(out)
    results = []
    for k, hand in enumerate(HANDS):
        conf = float(out.confidence[0, k])
        if conf < net.cfg.model.detect_threshold:
            results.append(HandResult(hand, False, conf))
            continue
        results.append(HandResult(hand, True, conf, arr["root"][0, k], arr["joints"][0, k], arr["vertices"][0, k]))
    return results


def write_obj(path: str | Path, vertices: np.ndarray, faces: np.ndarray) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return np.array(verts), np.array(faces, dtype=np.int64)


def export(results: list[HandResult], net: HandFusionNet, out_dir: str | Path) -> dict:
    """Write ``<hand>.obj`` per detected hand and ``prediction.json``; returns the JSON body."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    body = {}
    for r in results:
        entry = {"detected": r.detected, "confidence": r.confidence}
        if r.detected:
            obj = out / f"{r.hand}.obj"
            write_obj(obj, r.vertices, net.topo.hand_faces(r.hand))
            entry.update(root=r.root.tolist(), joints=r.joints.tolist(), obj=obj.name)
        else:
            entry["error"] = f"no {r.hand} hand detected (center confidence {r.confidence:.3f} < " \
                             f"{net.cfg.model.detect_threshold})"
        body[r.hand] = entry
    (out / "prediction.json").write_text(json.dumps(body, indent=1))
    return body
