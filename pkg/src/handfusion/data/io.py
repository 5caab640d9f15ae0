"""Sample container and the on-disk dataset format.

A dataset directory holds ``manifest.json`` and one directory per sample::

    rgb.png         8-bit RGB
    depth.png       16-bit single channel, millimeters (0 = no measurement)
    mask_left.png   8-bit, nonzero = hand
    mask_right.png
    anno.json       {"intrinsics": {fx, fy, cx, cy},
                     "hands": {"left": {"present", "vertices"[778][3], "joints"[21][3]},
                               "right": {...}}}

Coordinates are camera-frame meters.  See docs/sample_format.md.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ParseError
from ..geometry import CameraIntrinsics
from ..handmodel import NUM_JOINTS, NUM_VERTS

HANDS = ("left", "right")
SCHEMA_VERSION = 1
JOINT_TOLERANCE = 1e-6


@dataclass
class HandAnnotation:
    present: bool
    vertices: np.ndarray  # (778, 3)
    joints: np.ndarray  # (21, 3)
    mask: np.ndarray  # (H, W) bool

    def copy(self) -> "HandAnnotation":
        return HandAnnotation(self.present, self.vertices.copy(), self.joints.copy(), self.mask.copy())


@dataclass
class Sample:
    rgb: np.ndarray  # (3, H, W) uint8
    depth: np.ndarray  # (H, W) meters
    intrinsics: CameraIntrinsics
    hands: dict[str, HandAnnotation]
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    def copy(self) -> "Sample":
        return replace(self, rgb=self.rgb.copy(), depth=self.depth.copy(),
                       hands={h: a.copy() for h, a in self.hands.items()}, meta=dict(self.meta))


def check_sample(s: Sample, regressor: np.ndarray | None = None, where: str = "sample") -> None:
    """Validate shapes and, given a regressor, that joints equal J @ vertices."""
    if s.rgb.shape != (3,) + s.depth.shape:
        raise ParseError(f"{where}/rgb.png", f"shape {s.rgb.shape} does not match depth {s.depth.shape}")
    s.intrinsics.check_image(s.height, s.width)
    for hand in HANDS:
        if hand not in s.hands:
            raise ParseError(f"{where}/anno.json:hands.{hand}", "missing")
        a = s.hands[hand]
        if a.vertices.shape != (NUM_VERTS, 3):
            raise ParseError(f"{where}/anno.json:hands.{hand}.vertices", f"expected ({NUM_VERTS}, 3), got {a.vertices.shape}")
        if a.joints.shape != (NUM_JOINTS, 3):
            raise ParseError(f"{where}/anno.json:hands.{hand}.joints", f"expected ({NUM_JOINTS}, 3), got {a.joints.shape}")
        if a.mask.shape != s.depth.shape:
            raise ParseError(f"{where}/mask_{hand}.png", f"shape {a.mask.shape} does not match depth")
        if a.present and regressor is not None:
            err = np.abs(regressor @ a.vertices - a.joints).max()
            if err > JOINT_TOLERANCE:
                raise ParseError(f"{where}/anno.json:hands.{hand}.joints", f"joints differ from J @ vertices by {err:.3g}")


def save_sample(s: Sample, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(s.rgb.transpose(1, 2, 0)).astype(np.uint8), "RGB").save(d / "rgb.png")
    mm = np.rint(np.nan_to_num(s.depth, posinf=0.0) * 1000.0)
    Image.fromarray(np.clip(mm, 0, 65535).astype(np.uint16)).save(d / "depth.png")
    for hand in HANDS:
        Image.fromarray(s.hands[hand].mask.astype(np.uint8) * 255, "L").save(d / f"mask_{hand}.png")
    anno = {
        "intrinsics": s.intrinsics.to_dict(),
        "hands": {
            hand: {
                "present": bool(a.present),
                "vertices": a.vertices.tolist(),
                "joints": a.joints.tolist(),
            }
            for hand, a in s.hands.items()
        },
    }
    if s.meta:
        anno["meta"] = s.meta
    (d / "anno.json").write_text(json.dumps(anno))
    return d


def _read_png(path: Path, field_name: str) -> np.ndarray:
    if not path.exists():
        raise ParseError(field_name, f"missing file {path.name}")
    try:
        with Image.open(path) as im:
            return np.array(im)
    except OSError as exc:
        raise ParseError(field_name, f"unreadable image ({exc})") from exc


def _array(obj: dict, key: str, shape: tuple[int, ...], where: str) -> np.ndarray:
    if key not in obj:
        raise ParseError(f"{where}.{key}", "missing")
    try:
        arr = np.asarray(obj[key], dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}.{key}", f"not a numeric array ({exc})") from exc
    if arr.shape != shape:
        raise ParseError(f"{where}.{key}", f"expected shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(f"{where}.{key}", "non-finite values")
    return arr


def load_sample(directory: str | Path, regressor: np.ndarray | None = None) -> Sample:
    d = Path(directory)
    where = d.name
    rgb = _read_png(d / "rgb.png", f"{where}/rgb.png")
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ParseError(f"{where}/rgb.png", f"expected an RGB image, got shape {rgb.shape}")
    depth_raw = _read_png(d / "depth.png", f"{where}/depth.png")
    if depth_raw.ndim != 2:
        raise ParseError(f"{where}/depth.png", "expected a single-channel image")
    depth = depth_raw.astype(np.float64) / 1000.0
    anno_path = d / "anno.json"
    if not anno_path.exists():
        raise ParseError(f"{where}/anno.json", "missing file")
    try:
        anno = json.loads(anno_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}/anno.json", f"invalid JSON at line {exc.lineno} column {exc.colno}") from exc
    if not isinstance(anno, dict):
        raise ParseError(f"{where}/anno.json", "top level must be an object")
    intr_obj = anno.get("intrinsics")
    if not isinstance(intr_obj, dict):
        raise ParseError(f"{where}/anno.json:intrinsics", "missing or not an object")
    try:
        intr = CameraIntrinsics(*(float(intr_obj[k]) for k in ("fx", "fy", "cx", "cy")))
    except KeyError as exc:
        raise ParseError(f"{where}/anno.json:intrinsics.{exc.args[0]}", "missing") from exc
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}/anno.json:intrinsics", str(exc)) from exc
    hands_obj = anno.get("hands")
    if not isinstance(hands_obj, dict):
        raise ParseError(f"{where}/anno.json:hands", "missing or not an object")
    hands = {}
    for hand in HANDS:
        path = f"{where}/anno.json:hands.{hand}"
        h = hands_obj.get(hand)
        if not isinstance(h, dict):
            raise ParseError(path, "missing or not an object")
        if not isinstance(h.get("present"), bool):
            raise ParseError(f"{path}.present", "missing or not a boolean")
        verts = _array(h, "vertices", (NUM_VERTS, 3), path)
        joints = _array(h, "joints", (NUM_JOINTS, 3), path)
        mask = _read_png(d / f"mask_{hand}.png", f"{where}/mask_{hand}.png")
        hands[hand] = HandAnnotation(h["present"], verts, joints, mask > 0)
    s = Sample(np.ascontiguousarray(rgb.transpose(2, 0, 1)), depth, intr, hands, name=where,
               meta=anno.get("meta", {}))
    check_sample(s, regressor, where)
    return s


def write_manifest(root: str | Path, names: list[str], topology_digest: str, **extra) -> Path:
    path = Path(root) / "manifest.json"
    body = {"schema_version": SCHEMA_VERSION, "samples": list(names), "topology_sha256": topology_digest}
    body.update(extra)
    path.write_text(json.dumps(body, indent=1))
    return path


def read_manifest(root: str | Path) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise ParseError(str(path), "missing manifest")
    try:
        body = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(str(path), f"invalid JSON ({exc.msg})") from exc
    if body.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}:schema_version", f"unsupported value {body.get('schema_version')!r}")
    if not isinstance(body.get("samples"), list):
        raise ParseError(f"{path}:samples", "missing or not a list")
    return body


def load_dataset(root: str | Path, regressor: np.ndarray | None = None, limit: int | None = None) -> list[Sample]:
    body = read_manifest(root)
    names = body["samples"][:limit] if limit else body["samples"]
    return [load_sample(Path(root) / name, regressor) for name in names]
