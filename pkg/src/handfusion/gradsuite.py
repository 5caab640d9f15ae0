"""Finite-difference gradient suite over every differentiable operation.

Each case draws its inputs from a seeded generator and returns ``(f, x)``:
``f`` maps a 64-bit tensor to a scalar and ``x`` is the point of evaluation.
The scalar is a random linear functional of the op's output so that every
output element contributes with a distinct weight.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from .autodiff import Linear, Tensor, default_dtype, grad_check, inject_fault, ops
from .errors import ContractError
from .fusion import FeatureTransform, PDFNet, build_clouds, final_condition, transform
from .gcn import ChebConv, MeshDecoder, cheb_conv, init_graph_features
from .geometry import fetch_features, fetch_features_batched, project_tensor
from .image_encoder import CenterDecoder, CenterFeature, ImageEncoder, MaskDecoder, PyramidImageFeatures
from .point_encoder import PointNetGlobal, SetAbstraction, plan_level
from .topology import miniature_topology

TOLERANCE = 1e-4
EPS = 1e-6


def _functional(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    r = rng.normal(size=out.shape)
    return lambda y: ops.sum(ops.mul(y, r))


def _wrap(op: Callable[[Tensor], Tensor], x: np.ndarray, rng: np.random.Generator):
    probe = op(Tensor(x))
    lin = _functional(probe, rng)
    return (lambda t: lin(op(t))), x


def _away_from(x: np.ndarray, kinks, margin: float = 1e-3) -> np.ndarray:
    for k in kinks:
        close = np.abs(x - k) < margin
        x = np.where(close, k + np.sign(x - k + 1e-12) * margin * 2, x)
    return x


# -- elementwise and structural kernels ---------------------------------------

def _binary_both(fn, positive_b=False):
    def build(rng):
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(3, 4))
        if positive_b:
            b = np.sign(b) * (np.abs(b) + 0.5)
        # differentiate through both operands by splitting one input vector
        x = np.concatenate([a.ravel(), b.ravel()])

        def op(t):
            ta, tb = ops.split(t, [a.size, b.size], axis=0)
            return fn(ops.reshape(ta, a.shape), ops.reshape(tb, b.shape))
        return _wrap(op, x, rng)
    return build


def _unary(fn, low=-2.0, high=2.0, kinks=()):
    def build(rng):
        x = _away_from(rng.uniform(low, high, size=(3, 5)), kinks)
        return _wrap(fn, x, rng)
    return build


def _case_reduce(fn):
    def build(rng):
        return _wrap(fn, rng.normal(size=(3, 4, 5)), rng)
    return build


def _case_getitem_adv(rng):
    idx = rng.integers(0, 6, size=8)
    return _wrap(lambda t: ops.getitem(t, idx), rng.normal(size=(6, 3)), rng)


def _case_gather_rows(rng):
    idx = rng.integers(0, 7, size=(4, 5))
    return _wrap(lambda t: ops.gather_rows(t, idx), rng.normal(size=(7, 3)), rng)


def _case_batched_gather(rng):
    idx = rng.integers(0, 6, size=(2, 4, 3))
    return _wrap(lambda t: ops.batched_gather(t, idx), rng.normal(size=(2, 6, 3)), rng)


def _case_matmul(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 6))
    x = np.concatenate([a.ravel(), b.ravel()])

    def op(t):
        ta, tb = ops.split(t, [20, 30], axis=0)
        return ops.matmul(ops.reshape(ta, (4, 5)), ops.reshape(tb, (5, 6)))
    return _wrap(op, x, rng)


def _case_matmul_batched(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 2))
    x = np.concatenate([a.ravel(), b.ravel()])

    def op(t):
        ta, tb = ops.split(t, [24, 8], axis=0)
        return ops.matmul(ops.reshape(ta, (2, 3, 4)), ops.reshape(tb, (4, 2)))
    return _wrap(op, x, rng)


def _case_conv2d(stride, padding, k):
    def build(rng):
        x = rng.normal(size=(2, 2, 6, 6))
        w = rng.normal(size=(3, 2, k, k))
        bias = rng.normal(size=3)
        xs = np.concatenate([x.ravel(), w.ravel(), bias])

        def op(t):
            tx, tw, tb = ops.split(t, [x.size, w.size, 3], axis=0)
            return ops.conv2d(ops.reshape(tx, x.shape), ops.reshape(tw, w.shape), tb, stride, padding)
        return _wrap(op, xs, rng)
    return build


def _case_conv_transpose(stride, padding, k):
    def build(rng):
        x = rng.normal(size=(2, 2, 3, 3))
        w = rng.normal(size=(2, 3, k, k))
        bias = rng.normal(size=3)
        xs = np.concatenate([x.ravel(), w.ravel(), bias])

        def op(t):
            tx, tw, tb = ops.split(t, [x.size, w.size, 3], axis=0)
            return ops.conv_transpose2d(ops.reshape(tx, x.shape), ops.reshape(tw, w.shape), tb, stride, padding)
        return _wrap(op, xs, rng)
    return build


def _case_batch_norm(training):
    def build(rng):
        x = rng.normal(size=(3, 2, 3, 3))
        gamma, beta = rng.uniform(0.5, 1.5, size=2), rng.normal(size=2)
        xs = np.concatenate([x.ravel(), gamma, beta])
        rm, rv = rng.normal(size=2), rng.uniform(0.5, 2.0, size=2)

        def op(t):
            tx, tg, tb = ops.split(t, [x.size, 2, 2], axis=0)
            # fresh running buffers per call keep the function pure
            return ops.batch_norm(ops.reshape(tx, x.shape), tg, tb, rm.copy(), rv.copy(), training, 0.1, 1e-5)
        return _wrap(op, xs, rng)
    return build


def _case_loss_kernel(fn):
    def build(rng):
        target = rng.normal(size=(4, 3)) * 1.5
        x = target + _away_from(rng.normal(size=(4, 3)) * 1.5, (-1.0, 0.0, 1.0))
        return (lambda t: fn(t, target)), x
    return build


# -- module-level cases ---------------------------------------------------------

def _set_param(module, attr_path: str, value: Tensor):
    obj = module
    parts = attr_path.split(".")
    for p in parts[:-1]:
        obj = obj[int(p)] if p.isdigit() else getattr(obj, p)
    setattr(obj, parts[-1], value)


def _param_case(module, attr_path: str, forward: Callable[[], Tensor], rng):
    """Differentiate ``forward`` w.r.t. one parameter of ``module``."""
    obj = module
    for p in attr_path.split("."):
        obj = obj[int(p)] if p.isdigit() else getattr(obj, p)
    x0 = obj.data.copy()
    lin = _functional(forward(), rng)

    def f(t):
        _set_param(module, attr_path, t)
        try:
            return lin(forward())
        finally:
            _set_param(module, attr_path, Tensor(x0, requires_grad=True))
    return f, x0


def _case_fetch(mode):
    def build(rng):
        fmap = rng.normal(size=(3, 4, 5))
        pix = np.stack([rng.integers(0, 20, size=6), rng.integers(0, 16, size=6)], axis=1)
        if mode == "nearest":
            return _wrap(lambda t: fetch_features(t, pix, 4, "nearest"), fmap, rng)
        pix = pix + 0.0
        return _wrap(lambda t: fetch_features_batched(ops.reshape(t, (1, 3, 4, 5)), pix[None], np.zeros(1, np.int64), 4, "bilinear"), fmap, rng)
    return build


def _case_project(rng):
    pts = rng.normal(size=(2, 5, 3)) * 0.1 + np.array([0, 0, 0.6])
    fx = rng.uniform(100, 200, size=(2, 1))
    return _wrap(lambda t: project_tensor(t, fx, fx, 40.0, 50.0), pts, rng)


def _small_cloud(rng, n=16):
    return rng.normal(size=(2, n, 3)) * 0.03


def _case_set_abstraction(which):
    def build(rng):
        xyz = _small_cloud(rng)
        plan = plan_level(xyz, 6, 0.04, 4)
        sa = SetAbstraction(3, rng, width=5)
        feats = rng.normal(size=(2, 16, 3))
        if which == "input":
            return _wrap(lambda t: sa(t, plan), feats, rng)
        return _param_case(sa, "layer.weight", lambda: sa(Tensor(feats), plan), rng)
    return build


def _case_pointnet(rng):
    net = PointNetGlobal(4, rng, hidden=6, out=5)
    return _wrap(lambda t: net(t), rng.normal(size=(2, 7, 4)), rng)


def _case_ftn(rng):
    m = FeatureTransform(3, 4, rng)
    m.mlp.layers[-1].weight.data[...] = rng.normal(size=m.mlp.layers[-1].weight.shape)
    rgb, pt = rng.normal(size=(5, 3)), rng.normal(size=(5, 4))

    def run():
        a, b = m(Tensor(rgb), Tensor(pt))
        return ops.concat([a, b], axis=-1)
    return _param_case(m, "mlp.layers.0.weight", run, rng)


def _case_transform(rng):
    p, a, b = rng.normal(size=(3, 5, 4))
    x = np.concatenate([p.ravel(), a.ravel(), b.ravel()])

    def op(t):
        tp, ta, tb = (ops.reshape(s, (5, 4)) for s in ops.split(t, [20, 20, 20], axis=0))
        return transform(tp, ta, tb)
    return _wrap(op, x, rng)


def _case_final_condition(rng):
    m = FeatureTransform(4, 6, rng)
    m.mlp.layers[-1].weight.data[...] = rng.normal(size=m.mlp.layers[-1].weight.shape) * 0.5
    center = rng.normal(size=(2, 4))
    return _wrap(lambda t: final_condition(Tensor(center), t, m), rng.normal(size=(2, 6)), rng)


def _case_fuse(rng):
    net = PDFNet(rng, "pdfnet", global_dim=16, center_dim=8)
    for psi in net.psi:
        last = psi.mlp.layers[-1].weight
        last.data[...] = rng.normal(size=last.shape) * 0.1
    xyz = _small_cloud(rng)
    pix = np.stack([rng.integers(0, 4, size=(2, 16)), rng.integers(0, 4, size=(2, 16))], axis=-1)
    clouds = build_clouds(xyz, pix, [0, 1], radii=(0.04, 0.08), ks=(4, 4), sizes=(8, 4))
    f2 = Tensor(rng.normal(size=(2, 64, 2, 2)))
    f3 = Tensor(rng.normal(size=(2, 256, 1, 1)))

    def op(t):
        pyr = PyramidImageFeatures(ops.reshape(t, (2, 3, 4, 4)), f2, f3)
        return net.point_global(pyr, clouds)
    return _wrap(op, rng.normal(size=(2 * 3 * 4 * 4,)) * 0.5, rng)


def _case_cheb(which):
    def build(rng):
        topo = miniature_topology()
        lap = topo.laplacians[0]
        conv = ChebConv(3, 4, rng, K=3)
        x = rng.normal(size=(2, 8, 3))
        if which == "input":
            return _wrap(lambda t: conv(t, lap), x, rng)
        return _wrap(lambda t: cheb_conv(Tensor(x), lap, t), rng.normal(size=(3, 3, 4)), rng)
    return build


def _case_init_features(rng):
    a, b = Linear(6, 4, rng), Linear(4, 8 * 5, rng)
    tpl = rng.normal(size=(2, 8, 3))
    return _wrap(lambda t: init_graph_features(t, tpl, a, b), rng.normal(size=(2, 6)), rng)


def _case_decode_mesh(rng):
    topo = miniature_topology()
    dec = MeshDecoder(topo, rng, global_dim=6, widths=(8, 6, 4), bottleneck=4)
    dec.vertex_head.weight.data[...] = rng.normal(size=dec.vertex_head.weight.shape) * 0.1
    dec.root_head.layers[-1].weight.data[...] = rng.normal(size=dec.root_head.layers[-1].weight.shape) * 0.1
    root = np.array([[0.0, 0.0, 0.5], [0.1, 0.0, 0.6]])
    left = np.array([True, False])

    def op(t):
        p = dec(t, root, left)
        return ops.concat([ops.reshape(p.camera_mesh, (2, -1)), ops.reshape(p.camera_joints, (2, -1))], axis=-1)
    return _wrap(op, rng.normal(size=(2, 6)), rng)


def _case_encoder(rng):
    enc = ImageEncoder(rng, width=4)

    def op(t):
        p = enc(t)
        return ops.concat([ops.reshape(p.f2, (-1,)), ops.reshape(p.f3, (-1,))], axis=0)
    return _wrap(op, rng.normal(size=(1, 3, 8, 8)), rng)


def _case_center_decoder(rng):
    dec = CenterDecoder(rng, c_in=4)

    def op(t):
        return dec(PyramidImageFeatures(None, None, t)).heatmaps
    return _wrap(op, rng.normal(size=(2, 4, 3, 3)), rng)


def _case_mask_decoder(rng):
    dec = MaskDecoder(rng, c_in=4)
    peaks = rng.integers(0, 8, size=(2, 2, 2))
    return _wrap(lambda t: dec(PyramidImageFeatures(None, None, t), peaks), rng.normal(size=(2, 4, 2, 2)), rng)


def _case_center_feature(rng):
    m = CenterFeature(rng, c_in=5, dim=3)
    peaks = np.stack([rng.integers(0, 16, size=3), rng.integers(0, 12, size=3)], axis=1)
    return _wrap(lambda t: m(t, peaks, np.array([0, 1, 1])), rng.normal(size=(2, 5, 3, 4)), rng)


def _case_center_loss(rng):
    gt = np.exp(-rng.uniform(0, 3, size=(2, 2, 4, 4)))
    gt[0, 0, 1, 2] = gt[1, 1, 3, 0] = 1.0
    x = rng.uniform(0.05, 0.95, size=gt.shape)
    return (lambda t: L.center_loss(t, gt)), x


def _case_mask_loss(rng):
    gt = (rng.uniform(size=(2, 2, 3, 3)) > 0.5).astype(float)
    x = _away_from(rng.uniform(-1.5, 2.5, size=gt.shape), (-1.0, 0.0, 1.0, 2.0))
    return (lambda t: L.mask_loss(t, gt)), x


def _case_l1_term(rng):
    gt = rng.normal(size=(4, 5, 3))
    x = gt + _away_from(rng.normal(size=gt.shape), (0.0,))
    w = np.array([1.0, 0.0, 1.0, 1.0])
    return (lambda t: L.l1_term(t, gt, w, 2)), x


def _case_reproj(rng):
    gt = rng.normal(size=(2, 6, 3)) * 0.05 + np.array([0, 0, 0.5])
    gj = rng.normal(size=(2, 3, 3)) * 0.05 + np.array([0, 0, 0.5])
    x = np.concatenate([(gt + rng.normal(size=gt.shape) * 0.01).ravel(), (gj + rng.normal(size=gj.shape) * 0.01).ravel()])
    intr = np.array([[150.0, 150.0, 48.0, 48.0], [170.0, 170.0, 50.0, 45.0]])

    def f(t):
        tm, tj = ops.split(t, [gt.size, gj.size], axis=0)
        return ops.mul(L.reprojection_loss(ops.reshape(tm, gt.shape), gt, ops.reshape(tj, gj.shape), gj, intr), 1e-3)
    return f, x


def _case_smooth(rng):
    topo = miniature_topology()
    gt = topo.template_full[None] * rng.uniform(0.8, 1.2, size=(2, 1, 1))
    x = gt + rng.normal(size=gt.shape) * 0.01
    return (lambda t: L.smooth_loss(t, gt, topo.faces)), x


@dataclass(frozen=True)
class GradCase:
    name: str
    op: str  # node name used for fault injection
    build: Callable[[np.random.Generator], tuple]


CASES: list[GradCase] = [
    GradCase("add", "add", _binary_both(ops.add)),
    GradCase("sub", "sub", _binary_both(ops.sub)),
    GradCase("mul", "mul", _binary_both(ops.mul)),
    GradCase("div", "div", _binary_both(ops.div, positive_b=True)),
    GradCase("neg", "neg", _unary(ops.neg)),
    GradCase("power", "power", _unary(lambda t: ops.power(t, 3.0))),
    GradCase("square", "square", _unary(ops.square)),
    GradCase("sqrt", "sqrt", _unary(ops.sqrt, 0.2, 3.0)),
    GradCase("exp", "exp", _unary(ops.exp)),
    GradCase("log", "log", _unary(ops.log, 0.2, 3.0)),
    GradCase("abs", "abs", _unary(ops.abs, kinks=(0.0,))),
    GradCase("relu", "relu", _unary(ops.relu, kinks=(0.0,))),
    GradCase("sigmoid", "sigmoid", _unary(ops.sigmoid)),
    GradCase("clamp", "clamp", _unary(lambda t: ops.clamp(t, -0.5, 0.7), kinks=(-0.5, 0.7))),
    GradCase("sum", "sum", _case_reduce(lambda t: ops.sum(t, axis=1))),
    GradCase("mean", "mean", _case_reduce(lambda t: ops.mean(t, axis=(0, 2)))),
    GradCase("max", "max", _case_reduce(lambda t: ops.max(t, axis=2))),
    GradCase("reshape", "reshape", _case_reduce(lambda t: ops.reshape(t, (4, 15)))),
    GradCase("transpose", "transpose", _case_reduce(lambda t: ops.transpose(t, (2, 0, 1)))),
    GradCase("broadcast", "broadcast_to", _unary(lambda t: ops.broadcast_to(t, (2, 3, 5)))),
    GradCase("concat", "concat", _case_reduce(lambda t: ops.concat([t, ops.mul(t, 2.0)], axis=1))),
    GradCase("split", "getitem", _case_reduce(lambda t: ops.split(t, [1, 3], axis=1)[1])),
    GradCase("getitem", "getitem", _case_getitem_adv),
    GradCase("gather_rows", "gather", _case_gather_rows),
    GradCase("batched_gather", "gather", _case_batched_gather),
    GradCase("matmul", "matmul", _case_matmul),
    GradCase("matmul_batched", "matmul", _case_matmul_batched),
    GradCase("conv2d", "conv2d", _case_conv2d(1, 1, 3)),
    GradCase("conv2d_strided", "conv2d", _case_conv2d(2, 1, 4)),
    GradCase("conv_transpose2d", "conv_transpose2d", _case_conv_transpose(2, 0, 2)),
    GradCase("conv_transpose2d_pad", "conv_transpose2d", _case_conv_transpose(1, 1, 3)),
    GradCase("batch_norm_train", "batch_norm", _case_batch_norm(True)),
    GradCase("batch_norm_eval", "batch_norm", _case_batch_norm(False)),
    GradCase("l1_loss", "abs", _case_loss_kernel(ops.l1_loss)),
    GradCase("smooth_l1_loss", "smooth_l1", _case_loss_kernel(ops.smooth_l1_loss)),
    GradCase("mse_loss", "square", _case_loss_kernel(ops.mse_loss)),
    GradCase("fetch_nearest", "gather", _case_fetch("nearest")),
    GradCase("fetch_bilinear", "gather", _case_fetch("bilinear")),
    GradCase("project", "div", _case_project),
    GradCase("set_abstraction_input", "max", _case_set_abstraction("input")),
    GradCase("set_abstraction_weight", "max", _case_set_abstraction("weight")),
    GradCase("pointnet_global", "max", _case_pointnet),
    GradCase("ftn", "matmul", _case_ftn),
    GradCase("transform", "mul", _case_transform),
    GradCase("final_condition", "mul", _case_final_condition),
    GradCase("fuse_pyramid", "gather", _case_fuse),
    GradCase("cheb_conv_input", "matmul", _case_cheb("input")),
    GradCase("cheb_conv_weight", "matmul", _case_cheb("weight")),
    GradCase("init_graph_features", "matmul", _case_init_features),
    GradCase("decode_mesh", "matmul", _case_decode_mesh),
    GradCase("encode_pyramid", "conv2d", _case_encoder),
    GradCase("decode_center", "conv_transpose2d", _case_center_decoder),
    GradCase("decode_mask", "conv_transpose2d", _case_mask_decoder),
    GradCase("center_feature", "gather", _case_center_feature),
    GradCase("center_loss", "log", _case_center_loss),
    GradCase("mask_loss", "smooth_l1", _case_mask_loss),
    GradCase("l1_term", "abs", _case_l1_term),
    GradCase("reprojection_loss", "div", _case_reproj),
    GradCase("smooth_loss", "abs", _case_smooth),
]


@dataclass
class CaseReport:
    name: str
    max_error: float
    seeds: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error < TOLERANCE


def run_case(case: GradCase, seeds: int = 20, eps: float = EPS) -> CaseReport:
    tic = time.perf_counter()
    worst = 0.0
    with default_dtype(np.float64):
        for seed in range(seeds):
            f, x = case.build(np.random.default_rng([seed, 7919]))
            err = grad_check(f, x, eps)
            worst = max(worst, err if np.isfinite(err) else np.inf)
    return CaseReport(case.name, worst, seeds, time.perf_counter() - tic)


def run_suite(seeds: int = 20, eps: float = EPS, names=None, fault: str | None = None) -> list[CaseReport]:
    """Run every case (or the ``names`` subset); ``fault`` scales one op's backward by 1.5."""
    cases = [c for c in CASES if names is None or c.name in names]
    if fault is not None and fault not in {c.op for c in CASES}:
        raise ContractError(f"unknown operation {fault!r} for fault injection")
    if fault is None:
        return [run_case(c, seeds, eps) for c in cases]
    with inject_fault(fault):
        return [run_case(c, seeds, eps) for c in cases]


def format_report(reports: list[CaseReport]) -> str:
    lines = [f"{'operation':<26}{'max rel err':>14}{'seeds':>7}{'sec':>7}  status"]
    for r in reports:
        lines.append(f"{r.name:<26}{r.max_error:>14.3e}{r.seeds:>7}{r.seconds:>7.2f}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
