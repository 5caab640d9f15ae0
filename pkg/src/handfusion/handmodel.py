"""Procedural low-poly articulated hand with 778 vertices and 21 joints.

The mesh is a palm tube (27 rings x 13 vertices plus two cap centers) and five
finger tubes (14 rings x 6 vertices plus a tip vertex).  Every vertex is
rigidly attached to one bone.  Joints sit at the centroids of the rings that
start each phalanx, so the linear joint regressor reproduces the posed joints
exactly.

Joint order: 0 wrist; thumb 1-4 (CMC, MCP, IP, TIP); index 5-8; middle 9-12;
ring 13-16; pinky 17-20 (MCP, PIP, DIP, TIP).  Joint 9 (middle MCP) is the root.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

NUM_VERTS = 778
NUM_JOINTS = 21
ROOT_JOINT = 9
FINGERS = ("thumb", "index", "middle", "ring", "pinky")

_PALM_RINGS, _PALM_RING = 27, 13
_FINGER_RINGS, _FINGER_RING = 14, 6
_PHALANX_RINGS = (5, 5, 4)

# hand frame: fingers along +y, palm facing -z, middle MCP at the origin
_FINGER_SPECS = {
    #          base joint                 direction              phalanx lengths           radii (base, tip)
    "thumb": ((-0.020, -0.060, -0.004), (-0.75, 0.66, -0.15), (0.040, 0.031, 0.026), (0.0120, 0.0085)),
    "index": ((-0.024, -0.004, 0.0), (-0.08, 1.0, 0.0), (0.040, 0.024, 0.019), (0.0095, 0.0075)),
    "middle": ((0.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.045, 0.028, 0.021), (0.0098, 0.0078)),
    "ring": ((0.021, -0.004, 0.0), (0.07, 1.0, 0.0), (0.042, 0.026, 0.020), (0.0092, 0.0072)),
    "pinky": ((0.039, -0.014, 0.0), (0.15, 1.0, 0.0), (0.033, 0.019, 0.018), (0.0080, 0.0065)),
}
_PALM_Y = (-0.088, 0.004)
_PALM_X = (0.006, 0.008)
_PALM_HALF_WIDTH = (0.030, 0.043)
_PALM_HALF_THICK = 0.013

# pose limits in degrees: (base flex, base abduction, middle flex, distal flex)
_LIMITS = {
    "thumb": ((-10, 45), (-20, 20), (0, 50), (0, 70)),
    "default": ((-10, 80), (-12, 12), (0, 95), (0, 65)),
}

# hand frame -> camera frame at the canonical orientation: fingers point up in
# the image (-y), back of the hand faces the camera (-z)
R_BASE = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])


@dataclass(frozen=True)
class HandTemplate:
    rest: np.ndarray  # (778, 3) hand frame
    faces: np.ndarray  # (F, 3) right-hand winding
    bone: np.ndarray  # (778,) bone id: 0 palm, 1 + 3*finger + phalanx
    joints_rest: np.ndarray  # (21, 3) hand frame
    regressor: np.ndarray  # (21, 778) row-stochastic
    stitch_edges: np.ndarray  # (E, 2) finger-base to palm connections

    @property
    def vertices(self) -> np.ndarray:
        """Rest mesh in the canonical camera orientation (right hand, root at origin)."""
        return self.rest @ R_BASE.T


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def _ring_basis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([0.0, 0.0, 1.0]) - d * d[2]
    a /= np.linalg.norm(a)
    b = np.cross(d, a)
    return a, b  # a x b = d


def _finger_geometry(name: str):
    base, d, lengths, radii = _FINGER_SPECS[name]
    base, d = np.array(base), np.array(d) / np.linalg.norm(d)
    joints = [base]
    for length in lengths:
        joints.append(joints[-1] + d * length)
    a, b = _ring_basis(d)
    theta = 2 * np.pi * np.arange(_FINGER_RING) / _FINGER_RING
    total = sum(lengths)
    verts, bones, ring_starts = [], [], []
    travelled = 0.0
    for k, (nr, length) in enumerate(zip(_PHALANX_RINGS, lengths)):
        ring_starts.append(len(verts))
        for i in range(nr):
            t = i / nr
            center = joints[k] + d * (length * t)
            r = radii[0] + (radii[1] - radii[0]) * (travelled + length * t) / total
            for th in theta:
                verts.append(center + r * (np.cos(th) * a + np.sin(th) * b))
                bones.append(k)
        travelled += length
    verts.append(joints[3])
    bones.append(2)
    return np.array(verts), np.array(bones), ring_starts, np.array(joints)


@lru_cache(maxsize=1)
def build_template() -> HandTemplate:
    verts, bones, faces = [], [], []
    # palm rings along +y; basis (z, x) so that z x x = +y
    theta = 2 * np.pi * np.arange(_PALM_RING) / _PALM_RING
    for i in range(_PALM_RINGS):
        t = i / (_PALM_RINGS - 1)
        y = _PALM_Y[0] + t * (_PALM_Y[1] - _PALM_Y[0])
        cx = _PALM_X[0] + t * (_PALM_X[1] - _PALM_X[0])
        hw = _PALM_HALF_WIDTH[0] + t * (_PALM_HALF_WIDTH[1] - _PALM_HALF_WIDTH[0])
        for th in theta:
            verts.append((cx + hw * np.sin(th), y, _PALM_HALF_THICK * np.cos(th)))
    for i in range(_PALM_RINGS - 1):
        faces += _tube_faces(i * _PALM_RING, (i + 1) * _PALM_RING, _PALM_RING)
    bottom, top = len(verts), len(verts) + 1
    verts.append((_PALM_X[0], _PALM_Y[0], 0.0))
    verts.append((_PALM_X[1], _PALM_Y[1], 0.0))
    last = (_PALM_RINGS - 1) * _PALM_RING
    for k in range(_PALM_RING):
        k1 = (k + 1) % _PALM_RING
        faces.append((bottom, k1, k))
        faces.append((top, last + k, last + k1))
    bones = [0] * len(verts)

    regressor = np.zeros((NUM_JOINTS, NUM_VERTS))
    regressor[0, bottom] = 1.0
    joints_rest = np.zeros((NUM_JOINTS, 3))
    joints_rest[0] = verts[bottom]
    palm_pts = np.array(verts[:last + _PALM_RING])
    stitch = []
    for f, name in enumerate(FINGERS):
        fv, fb, ring_starts, fj = _finger_geometry(name)
        off = len(verts)
        verts.extend(map(tuple, fv))
        bones.extend(1 + 3 * f + fb)
        n_rings = sum(_PHALANX_RINGS)
        for i in range(n_rings - 1):
            faces += _tube_faces(off + i * _FINGER_RING, off + (i + 1) * _FINGER_RING, _FINGER_RING)
        tip = off + n_rings * _FINGER_RING
        lastf = off + (n_rings - 1) * _FINGER_RING
        for k in range(_FINGER_RING):
            faces.append((lastf + k, lastf + (k + 1) % _FINGER_RING, tip))
        j0 = 1 + 4 * f
        for k, start in enumerate(ring_starts):
            regressor[j0 + k, off + start:off + start + _FINGER_RING] = 1.0 / _FINGER_RING
        regressor[j0 + 3, tip] = 1.0
        joints_rest[j0:j0 + 4] = fj
        for k in range(_FINGER_RING):
            d = np.linalg.norm(palm_pts - fv[k], axis=1)
            stitch.append((off + k, int(np.argmin(d))))
    rest = np.array(verts)
    assert rest.shape == (NUM_VERTS, 3), rest.shape
    return HandTemplate(rest, np.array(faces, dtype=np.int64), np.array(bones), joints_rest,
                        regressor, np.array(stitch, dtype=np.int64))


def _tube_faces(r0: int, r1: int, n: int) -> list[tuple[int, int, int]]:
    out = []
    for k in range(n):
        k1 = (k + 1) % n
        out.append((r0 + k, r0 + k1, r1 + k1))
        out.append((r0 + k, r1 + k1, r1 + k))
    return out


def random_pose(rng: np.random.Generator) -> np.ndarray:
    """Per-finger angles (5, 4) in radians: base flex, base abduction, middle flex, distal flex."""
    angles = np.zeros((5, 4))
    for f, name in enumerate(FINGERS):
        lim = _LIMITS["thumb" if name == "thumb" else "default"]
        angles[f] = [rng.uniform(*lo_hi) for lo_hi in lim]
    return np.deg2rad(angles)


def pose_hand(angles: np.ndarray, template: HandTemplate | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Articulate the right-hand template.

    Returns vertices (778, 3) and joints (21, 3) in the canonical camera
    orientation, root-aligned at the rest root (the middle MCP does not move).
    """
    tpl = template or build_template()
    out = tpl.rest.copy()
    joints = tpl.joints_rest.copy()
    z = np.array([0.0, 0.0, 1.0])
    for f, name in enumerate(FINGERS):
        j0 = 1 + 4 * f
        rest_j = tpl.joints_rest[j0:j0 + 4]
        d = (rest_j[1] - rest_j[0]) / np.linalg.norm(rest_j[1] - rest_j[0])
        flex_axis = np.cross(z, d)
        flex, abd, mid, dist = angles[f]
        rots = []
        R = _rodrigues(z, abd) @ _rodrigues(flex_axis, flex)
        rots.append(R)
        R = R @ _rodrigues(flex_axis, mid)
        rots.append(R)
        R = R @ _rodrigues(flex_axis, dist)
        rots.append(R)
        posed = [rest_j[0]]
        for k in range(3):
            posed.append(posed[-1] + rots[k] @ (rest_j[k + 1] - rest_j[k]))
        for k in range(3):
            sel = tpl.bone == 1 + 3 * f + k
            out[sel] = posed[k] + (tpl.rest[sel] - rest_j[k]) @ rots[k].T
        joints[j0:j0 + 4] = posed
    return out @ R_BASE.T, joints @ R_BASE.T


def mirror(vertices: np.ndarray) -> np.ndarray:
    """Reflect across the camera y-z plane (right hand <-> left hand)."""
    out = np.array(vertices, copy=True)
    out[..., 0] *= -1
    return out


def hand_faces(hand: str, template: HandTemplate | None = None) -> np.ndarray:
    faces = (template or build_template()).faces
    return faces[:, ::-1].copy() if hand == "left" else faces
