"""Z-buffer triangle rasterizer for synthetic depth, masks and flat shading.

Pixel centers sit at integer coordinates.  Depth is interpolated
perspective-correctly (1/z is affine in screen space).  No anti-aliasing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import CameraIntrinsics, project


@dataclass
class RenderBuffers:
    depth: np.ndarray  # (H, W) meters, inf where empty
    mesh_id: np.ndarray  # (H, W) index of the front-most mesh, -1 where empty
    face_id: np.ndarray  # (H, W) face index within that mesh, -1 where empty


def rasterize(meshes: list[tuple[np.ndarray, np.ndarray]], intr: CameraIntrinsics, height: int,
              width: int) -> RenderBuffers:
    """Rasterize camera-frame meshes [(vertices (V, 3), faces (F, 3)), ...]."""
    depth = np.full((height, width), np.inf)
    mesh_id = np.full((height, width), -1, dtype=np.int64)
    face_id = np.full((height, width), -1, dtype=np.int64)
    for m, (verts, faces) in enumerate(meshes):
        uv = project(verts, intr)
        inv_z = 1.0 / verts[:, 2]
        tri_uv = uv[faces]  # (F, 3, 2)
        lo = np.maximum(np.ceil(tri_uv.min(axis=1)).astype(np.int64), 0)
        hi = np.minimum(np.floor(tri_uv.max(axis=1)).astype(np.int64), [width - 1, height - 1])
        for f in np.nonzero((hi >= lo).all(axis=1))[0]:
            (u0, v0), (u1, v1), (u2, v2) = tri_uv[f]
            area = (u1 - u0) * (v2 - v0) - (u2 - u0) * (v1 - v0)
            if area == 0:
                continue
            us = np.arange(lo[f, 0], hi[f, 0] + 1)
            vs = np.arange(lo[f, 1], hi[f, 1] + 1)
            pu, pv = np.meshgrid(us, vs)
            w0 = ((u1 - pu) * (v2 - pv) - (u2 - pu) * (v1 - pv)) / area
            w1 = ((u2 - pu) * (v0 - pv) - (u0 - pu) * (v2 - pv)) / area
            w2 = 1.0 - w0 - w1
            inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
            if not inside.any():
                continue
            a, b, c = faces[f]
            z = 1.0 / (w0 * inv_z[a] + w1 * inv_z[b] + w2 * inv_z[c])
            pv_in, pu_in, z_in = pv[inside], pu[inside], z[inside]
            closer = z_in < depth[pv_in, pu_in]
            pv_in, pu_in = pv_in[closer], pu_in[closer]
            depth[pv_in, pu_in] = z_in[closer]
            mesh_id[pv_in, pu_in] = m
            face_id[pv_in, pu_in] = f
    return RenderBuffers(depth, mesh_id, face_id)


def face_normals(verts: np.ndarray, faces: np.ndarray) -> np.ndarray:
    n = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]], verts[faces[:, 2]] - verts[faces[:, 0]])
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)


def shade(buffers: RenderBuffers, meshes: list[tuple[np.ndarray, np.ndarray]], colors: np.ndarray,
          background: np.ndarray, light=(0.3, -0.5, -1.0), ambient: float = 0.35) -> np.ndarray:
    """Flat Lambert shading over a background image; returns float RGB (H, W, 3) in [0, 255]."""
    light = np.asarray(light, dtype=np.float64)
    light /= np.linalg.norm(light)
    out = background.astype(np.float64).copy()
    for m, (verts, faces) in enumerate(meshes):
        sel = buffers.mesh_id == m
        if not sel.any():
            continue
        lam = np.abs(face_normals(verts, faces) @ light)
        k = ambient + (1 - ambient) * lam[buffers.face_id[sel]]
        out[sel] = k[:, None] * np.asarray(colors[m], dtype=np.float64)[None, :]
    return np.clip(out, 0, 255)
