"""Multi-resolution mesh hierarchy and its binary asset file.

The hierarchy is generated from a full mesh: farthest-point vertex selection
picks each coarser level from the previous one, coarse edges connect vertices
whose geodesic Voronoi cells touch, and each upsampling row holds barycentric
weights over at most three coarse vertices.  See docs/topology_format.md for
the byte layout.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import nnls
from scipy.sparse.csgraph import connected_components, dijkstra

from . import handmodel
from .errors import ParseError, TopologyError
from .point_encoder import farthest_point_sample

MAGIC = b"PDFT"
VERSION = 1
LEVEL_SIZES = (63, 126, 252)
DEFAULT_ASSET = Path(__file__).parent / "assets" / "hand_topology.pdft"


def _adjacency_from_faces(n: int, faces: np.ndarray, extra_edges: np.ndarray | None = None) -> sp.csr_matrix:
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    if extra_edges is not None and len(extra_edges):
        e = np.concatenate([e, extra_edges])
    a = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n)).tocsr()
    a = ((a + a.T) > 0).astype(np.float64)
    a.setdiag(0)
    a.eliminate_zeros()
    return a.tocsr()


def _power_iteration(m: np.ndarray, steps: int = 50, tol: float = 1e-9) -> tuple[float, bool]:
    x = np.random.default_rng(0).normal(size=m.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(steps):
        y = m @ x
        new = float(x @ y)
        norm = np.linalg.norm(y)
        if norm == 0:
            return 0.0, True
        x = y / norm
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new, True
        lam = new
    return lam, False


def scaled_laplacian(adjacency) -> np.ndarray:
    """2 L_norm / lambda_max - I for a connected undirected graph (dense result)."""
    a = sp.csr_matrix(adjacency, dtype=np.float64)
    if a.shape[0] != a.shape[1]:
        raise TopologyError("adjacency must be square")
    if abs(a - a.T).max() > 0:
        raise TopologyError("adjacency must be symmetric")
    n_comp, _ = connected_components(a, directed=False)
    if n_comp != 1:
        raise TopologyError(f"graph is disconnected ({n_comp} components)")
    deg = np.asarray(a.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    lap = np.eye(a.shape[0]) - (dinv[:, None] * a.toarray() * dinv[None, :])
    lap = 0.5 * (lap + lap.T)
    lam, converged = _power_iteration(lap)
    if not converged:
        # the Rayleigh quotient undershoots lambda_max before convergence, which
        # would push the rescaled spectrum past 1; fall back to a dense solve
        lam = float(np.linalg.eigvalsh(lap)[-1])
    out = 2.0 * lap / lam - np.eye(a.shape[0])
    return 0.5 * (out + out.T)


def _edge_lengths(adj: sp.csr_matrix, coords: np.ndarray) -> sp.csr_matrix:
    coo = adj.tocoo()
    w = np.linalg.norm(coords[coo.row] - coords[coo.col], axis=1) + 1e-12
    return sp.csr_matrix((w, (coo.row, coo.col)), shape=adj.shape)


def _barycentric(v: np.ndarray, cands: np.ndarray) -> np.ndarray:
    scale = max(np.linalg.norm(cands - v, axis=1).max(), 1e-9)
    a = np.vstack([(cands - v).T / scale, 100.0 * np.ones(len(cands))])
    b = np.concatenate([np.zeros(3), [100.0]])
    w, _ = nnls(a, b)
    if w.sum() <= 0:
        w = np.ones(len(cands))
    return w / w.sum()


def coarsen(coords: np.ndarray, adj: sp.csr_matrix, m: int):
    """Select ``m`` vertices and build coarse adjacency plus the upsampling matrix.

    Returns (selected indices, coarse adjacency, U) with U of shape (n_fine, m).
    """
    if m > len(coords):
        raise TopologyError(f"cannot select {m} of {len(coords)} vertices")
    sel = farthest_point_sample(coords, m, start=0)
    _, _, owner_src = dijkstra(_edge_lengths(adj, coords), directed=False, indices=sel,
                               min_only=True, return_predecessors=True)
    slot = {int(s): i for i, s in enumerate(sel)}
    owner = np.array([slot[int(s)] for s in owner_src])
    coo = adj.tocoo()
    ra, rb = owner[coo.row], owner[coo.col]
    cross = ra != rb
    cadj = sp.coo_matrix((np.ones(cross.sum()), (ra[cross], rb[cross])), shape=(m, m)).tocsr()
    cadj = ((cadj + cadj.T) > 0).astype(np.float64).tocsr()
    ccoords = coords[sel]
    rows, cols, vals = [], [], []
    for v in range(len(coords)):
        r = owner[v]
        if sel[r] == v:
            rows.append(v), cols.append(r), vals.append(1.0)
            continue
        cand = np.concatenate([[r], cadj.indices[cadj.indptr[r]:cadj.indptr[r + 1]]])
        d = np.linalg.norm(ccoords[cand] - coords[v], axis=1)
        cand = cand[np.argsort(d, kind="stable")[:3]]
        w = _barycentric(coords[v], ccoords[cand])
        for c, wc in zip(cand, w):
            if wc > 0:
                rows.append(v), cols.append(int(c)), vals.append(float(wc))
    up = sp.coo_matrix((vals, (rows, cols)), shape=(len(coords), m)).tocsr()
    return sel, cadj, up


@dataclass
class MeshTopology:
    template_full: np.ndarray  # (778, 3) right hand, canonical camera orientation, root at origin
    faces: np.ndarray
    adjacency: list[sp.csr_matrix]  # index 0: full mesh, 1..3: coarse levels (63, 126, 252)
    templates: list[np.ndarray]  # per coarse level, index 0 = level 1
    select: list[np.ndarray]  # indices of each coarse level's vertices in the full mesh
    upsample: list[sp.csr_matrix]  # U1 (126x63), U2 (252x126), U3 (778x252)
    regressor: np.ndarray  # (21, 778)
    root_joint: int = handmodel.ROOT_JOINT
    digest: str = ""
    laplacians: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.laplacians:
            self.laplacians = [scaled_laplacian(a) for a in self.adjacency[1:]]

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return tuple(len(t) for t in self.templates)

    def template(self, level: int, hand: str = "right") -> np.ndarray:
        """Template coordinates: level 0 is the full mesh, 1..3 the coarse levels."""
        t = self.template_full if level == 0 else self.templates[level - 1]
        return handmodel.mirror(t) if hand == "left" else t

    def hand_faces(self, hand: str) -> np.ndarray:
        return self.faces[:, ::-1].copy() if hand == "left" else self.faces

    def edges(self) -> np.ndarray:
        f = self.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)


def build_topology(vertices: np.ndarray, faces: np.ndarray, regressor: np.ndarray,
                   extra_edges: np.ndarray | None = None, sizes=LEVEL_SIZES) -> MeshTopology:
    vertices = np.asarray(vertices, dtype=np.float64)
    adj0 = _adjacency_from_faces(len(vertices), np.asarray(faces), extra_edges)
    if connected_components(adj0, directed=False)[0] != 1:
        raise TopologyError("full mesh graph is disconnected; pass stitching edges")
    adjs, templates, selects, ups = [adj0], [], [], []
    coords, adj, to_full = vertices, adj0, np.arange(len(vertices))
    for m in reversed(sizes):
        sel, cadj, up = coarsen(coords, adj, m)
        to_full = to_full[sel]
        coords = coords[sel]
        adj = cadj
        adjs.insert(1, cadj)
        templates.insert(0, coords)
        selects.insert(0, to_full)
        ups.insert(0, up)
    return MeshTopology(vertices, np.asarray(faces, dtype=np.int64), adjs, templates, selects, ups,
                        np.asarray(regressor, dtype=np.float64))


def hand_topology() -> MeshTopology:
    tpl = handmodel.build_template()
    return build_topology(tpl.vertices, tpl.faces, tpl.regressor, tpl.stitch_edges)


# -- binary asset ---------------------------------------------------------------

def _w_name(fh, name: str, kind: int) -> None:
    raw = name.encode()
    fh.write(struct.pack("<I", len(raw)) + raw + struct.pack("<B", kind))


def _w_dense(fh, name: str, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr)
    tag = 2 if arr.dtype.kind == "f" else 5
    arr = arr.astype("<f8" if tag == 2 else "<i4")
    _w_name(fh, name, 1)
    fh.write(struct.pack("<BI", tag, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape) + arr.tobytes())


def _w_coo(fh, name: str, m: sp.spmatrix) -> None:
    c = m.tocoo()
    _w_name(fh, name, 2)
    fh.write(struct.pack("<III", c.shape[0], c.shape[1], c.nnz))
    fh.write(c.row.astype("<i4").tobytes() + c.col.astype("<i4").tobytes() + c.data.astype("<f8").tobytes())


def _w_csr(fh, name: str, m: sp.spmatrix) -> None:
    c = sp.csr_matrix(m)
    c.sort_indices()
    _w_name(fh, name, 3)
    fh.write(struct.pack("<III", c.shape[0], c.shape[1], c.nnz))
    fh.write(c.indptr.astype("<i4").tobytes() + c.indices.astype("<i4").tobytes() + c.data.astype("<f8").tobytes())


def save_topology(topo: MeshTopology, path: str | Path) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<I", VERSION))
        _w_dense(fh, "template.0", topo.template_full)
        _w_dense(fh, "faces", topo.faces)
        _w_dense(fh, "root_joint", np.array([topo.root_joint]))
        for i, a in enumerate(topo.adjacency):
            _w_csr(fh, f"adjacency.{i}", a)
        for i in range(3):
            _w_dense(fh, f"template.{i + 1}", topo.templates[i])
            _w_dense(fh, f"select.{i + 1}", topo.select[i])
            _w_coo(fh, f"upsample.{i + 1}", topo.upsample[i])
        _w_coo(fh, "regressor", sp.coo_matrix(topo.regressor))
    topo.digest = file_digest(path)
    return topo.digest


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_sections(blob: bytes, where: str) -> dict:
    if blob[:4] != MAGIC:
        raise ParseError(where, "bad magic, not a topology asset")
    if struct.unpack_from("<I", blob, 4)[0] != VERSION:
        raise ParseError(where, "unsupported topology version")
    pos, out = 8, {}
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            name = blob[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            (kind,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            if kind == 1:
                tag, ndim = struct.unpack_from("<BI", blob, pos)
                pos += 5
                dims = struct.unpack_from(f"<{ndim}I", blob, pos)
                pos += 4 * ndim
                dt = np.dtype("<f8" if tag == 2 else "<i4")
                cnt = int(np.prod(dims))
                out[name] = np.frombuffer(blob, dt, cnt, pos).reshape(dims).copy()
                pos += cnt * dt.itemsize
            elif kind in (2, 3):
                r, c, nnz = struct.unpack_from("<III", blob, pos)
                pos += 12
                first = r + 1 if kind == 3 else nnz
                a = np.frombuffer(blob, "<i4", first, pos)
                pos += 4 * first
                b = np.frombuffer(blob, "<i4", nnz, pos)
                pos += 4 * nnz
                v = np.frombuffer(blob, "<f8", nnz, pos)
                pos += 8 * nnz
                if kind == 2:
                    out[name] = sp.coo_matrix((v, (a, b)), shape=(r, c)).tocsr()
                else:
                    out[name] = sp.csr_matrix((v.copy(), b.copy(), a.copy()), shape=(r, c))
            else:
                raise ParseError(f"{where}:{name}", f"unknown section kind {kind}")
    except (struct.error, ValueError) as exc:
        raise ParseError(where, f"truncated or corrupt asset ({exc})") from exc
    return out


def load_topology(path: str | Path = DEFAULT_ASSET) -> MeshTopology:
    path = Path(path)
    s = _read_sections(path.read_bytes(), str(path))
    try:
        topo = MeshTopology(
            template_full=s["template.0"],
            faces=s["faces"].astype(np.int64),
            adjacency=[s[f"adjacency.{i}"] for i in range(4)],
            templates=[s[f"template.{i}"] for i in (1, 2, 3)],
            select=[s[f"select.{i}"].astype(np.int64) for i in (1, 2, 3)],
            upsample=[s[f"upsample.{i}"] for i in (1, 2, 3)],
            regressor=s["regressor"].toarray(),
            root_joint=int(s["root_joint"][0]),
        )
    except KeyError as exc:
        raise ParseError(str(path), f"missing section {exc}") from exc
    topo.digest = file_digest(path)
    return topo


@lru_cache(maxsize=4)
def _cached(path: str) -> MeshTopology:
    return load_topology(path)


def default_topology() -> MeshTopology:
    if not DEFAULT_ASSET.exists():
        save_topology(hand_topology(), DEFAULT_ASSET)
    return _cached(str(DEFAULT_ASSET))


def sphere_mesh(n: int = 48, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Closed triangle mesh on ``n`` near-uniform sphere points (Fibonacci lattice)."""
    from scipy.spatial import ConvexHull

    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    pts = np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
    pts += np.random.default_rng(seed).normal(scale=1e-3, size=pts.shape)
    hull = ConvexHull(pts)
    faces = hull.simplices.copy()
    # orient outward
    centers = pts[faces].mean(axis=1)
    normals = np.cross(pts[faces[:, 1]] - pts[faces[:, 0]], pts[faces[:, 2]] - pts[faces[:, 0]])
    flip = (normals * centers).sum(axis=1) < 0
    faces[flip] = faces[flip][:, ::-1]
    return pts * 0.05, faces


def miniature_topology(n_verts: int = 48, sizes=(8, 16, 32), n_joints: int = 21, root_joint: int = 9,
                       seed: int = 0) -> MeshTopology:
    """Small sphere hierarchy for tests; the regressor rows are random convex combinations."""
    verts, faces = sphere_mesh(n_verts, seed)
    rng = np.random.default_rng(seed)
    reg = np.zeros((n_joints, n_verts))
    for j in range(n_joints):
        idx = rng.choice(n_verts, size=3, replace=False)
        w = rng.uniform(0.2, 1.0, size=3)
        reg[j, idx] = w / w.sum()
    topo = build_topology(verts, faces, reg, sizes=sizes)
    topo.root_joint = root_joint
    topo.digest = hashlib.sha256(verts.tobytes() + faces.tobytes()).hexdigest()
    return topo
