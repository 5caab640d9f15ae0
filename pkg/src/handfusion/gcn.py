"""Coarse-to-fine mesh decoding with Chebyshev graph convolutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import MLP, Linear, Module, Parameter, Tensor, get_default_dtype, ops
from .errors import DimensionError
from .topology import MeshTopology


def cheb_conv(x: Tensor, lap, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """sum_k T_k(L) x W_k with T_0 = I, T_1 = L, T_k = 2 L T_{k-1} - T_{k-2}.

    x is (..., N, C_in), lap (N, N) constant, weight (K, C_in, C_out).
    """
    K, c_in, _ = weight.shape
    if K < 1:
        raise DimensionError("Chebyshev order K must be >= 1")
    if x.shape[-1] != c_in:
        raise DimensionError(f"expected {c_in} input channels, got {x.shape[-1]}")
    lap = np.asarray(lap)
    if lap.shape != (x.shape[-2], x.shape[-2]):
        raise DimensionError(f"Laplacian {lap.shape} does not match {x.shape[-2]} vertices")
    L = Tensor(lap.astype(x.dtype, copy=False))
    ws = ops.split(weight, [1] * K, axis=0)
    t_prev, t_cur = x, None
    out = ops.matmul(x, ops.reshape(ws[0], weight.shape[1:]))
    for k in range(1, K):
        if k == 1:
            t_cur = ops.matmul(L, x)
        else:
            t_prev, t_cur = t_cur, ops.sub(ops.mul(ops.matmul(L, t_cur), 2.0), t_prev)
        out = ops.add(out, ops.matmul(t_cur, ops.reshape(ws[k], weight.shape[1:])))
    return ops.add(out, bias) if bias is not None else out


class ChebConv(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, K: int = 3):
        super().__init__()
        bound = np.sqrt(6.0 / (K * c_in))
        self.weight = Parameter(rng.uniform(-bound, bound, size=(K, c_in, c_out)))
        self.bias = Parameter(np.zeros(c_out))

    def forward(self, x: Tensor, lap) -> Tensor:
        return cheb_conv(x, lap, self.weight, self.bias)


@dataclass
class HandPrediction:
    """Decoder output for n hand instances (camera frame, meters)."""

    root: Tensor  # (n, 3)
    mesh_gcn: Tensor  # (n, 252, 3) root-aligned
    mesh_full: Tensor  # (n, 778, 3) root-aligned
    joints: Tensor  # (n, 21, 3) root-aligned, J @ mesh_full

    @property
    def camera_mesh(self) -> Tensor:
        return ops.add(self.mesh_full, ops.reshape(self.root, (-1, 1, 3)))

    @property
    def camera_joints(self) -> Tensor:
        return ops.add(self.joints, ops.reshape(self.root, (-1, 1, 3)))


def _templates(topo: MeshTopology, level: int, is_left: np.ndarray) -> np.ndarray:
    right, left = topo.template(level, "right"), topo.template(level, "left")
    return np.where(np.asarray(is_left, dtype=bool)[:, None, None], left[None], right[None])


class MeshDecoder(Module):
    """Global vector -> coarse graph features -> mesh offsets, plus a root head."""

    def __init__(self, topo: MeshTopology, rng: np.random.Generator, global_dim: int = 1024,
                 K: int = 3, widths=(512, 256, 128), bottleneck: int = 256):
        super().__init__()
        self.topo = topo
        self.n1 = topo.level_sizes[0]
        self.widths = widths
        self.init_a = Linear(global_dim, bottleneck, rng)
        self.init_b = Linear(bottleneck, self.n1 * (widths[0] - 3), rng)
        outs = list(widths[1:]) + [widths[-1] // 2]
        self.convs = []
        for c_in, c_out in zip(widths, outs):
            self.convs.append(ChebConv(c_in, c_out, rng, K))
            self.convs.append(ChebConv(c_out, c_out, rng, K))
        self.vertex_head = Linear(outs[-1], 3, rng, zero_init=True)
        self.root_head = MLP([global_dim, 256, 3], rng, zero_last=True)
        dt = get_default_dtype()
        self._laps = [lap.astype(dt) for lap in topo.laplacians]
        self._ups = [u.toarray().astype(dt) for u in topo.upsample]
        self._J = topo.regressor.astype(dt)

    def init_features(self, g: Tensor, is_left: np.ndarray) -> Tensor:
        return init_graph_features(g, _templates(self.topo, 1, is_left), self.init_a, self.init_b)

    def forward(self, g: Tensor, root_init: np.ndarray, is_left: np.ndarray) -> HandPrediction:
        n = g.shape[0]
        x = self.init_features(g, is_left)
        for level in range(3):
            x = ops.relu(self.convs[2 * level](x, self._laps[level]))
            x = ops.relu(self.convs[2 * level + 1](x, self._laps[level]))
            if level < 2:
                x = ops.matmul(Tensor(self._ups[level]), x)
        offsets = self.vertex_head(x)
        dt = g.dtype
        mesh_gcn = ops.add(offsets, _templates(self.topo, 3, is_left).astype(dt))
        full_offsets = ops.matmul(Tensor(self._ups[2]), offsets)
        mesh_full = ops.add(full_offsets, _templates(self.topo, 0, is_left).astype(dt))
        joints = ops.matmul(Tensor(self._J), mesh_full)
        r = self.topo.root_joint
        # translate so the regressed root joint sits at the origin
        shift = ops.reshape(ops.getitem(joints, (slice(None), slice(r, r + 1))), (n, 1, 3))
        mesh_gcn = ops.sub(mesh_gcn, shift)
        mesh_full = ops.sub(mesh_full, shift)
        joints = ops.sub(joints, shift)
        root = ops.add(self.root_head(g), np.asarray(root_init, dtype=dt))
        return HandPrediction(root, mesh_gcn, mesh_full, joints)


def init_graph_features(g: Tensor, template1: np.ndarray, lin_a: Linear, lin_b: Linear) -> Tensor:
    """Map (n, D) global vectors to (n, N1, C - 3) and append template coordinates."""
    n = g.shape[0]
    n1 = template1.shape[-2]
    h = lin_b(lin_a(g))
    h = ops.reshape(h, (n, n1, h.shape[-1] // n1))
    pos = Tensor(np.broadcast_to(template1, (n, n1, 3)).astype(g.dtype))
    return ops.concat([h, pos], axis=-1)


def decode_mesh(g: Tensor, topo: MeshTopology, decoder: MeshDecoder, root_init, is_left) -> HandPrediction:
    if decoder.topo is not topo:
        raise DimensionError("decoder was built for a different topology")
    return decoder(g, root_init, is_left)
