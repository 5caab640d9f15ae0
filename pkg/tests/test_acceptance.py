"""Acceptance criteria, one test each, at the stated tolerances.

Each test prints a single ``criterion N ... PASS|FAIL`` line.  Criteria 4 and 5
are long training runs; they are checked against the numbers recorded by
scripts/run_overfit.py and scripts/run_ablation.py under results/.  Set
HANDFUSION_RUN_LONG=1 to rerun those scripts first.
"""

import json
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from handfusion import losses as L
from handfusion.autodiff import Linear, Tensor, default_dtype, ops
from handfusion.data.augment import flip_sample
from handfusion.fusion import PDFNet, build_clouds
from handfusion.gcn import ChebConv, cheb_conv
from handfusion.geometry import CameraIntrinsics, back_project, project
from handfusion.gradsuite import run_suite
from handfusion.image_encoder import ImageEncoder, normalize_image
from handfusion.metrics import average, hand_metrics
from handfusion.point_encoder import ball_query, farthest_point_sample
from handfusion.topology import miniature_topology, scaled_laplacian
from test_autodiff import naive_conv2d
from test_gcn import dense_cheb_oracle
from test_metrics import crafted
from test_point_encoder import ball_query_oracle, greedy_fps_oracle
from test_topology import random_connected_graph

ROOT = Path(__file__).resolve().parents[1]
RESULTS = ROOT / "results"
RUN_LONG = os.environ.get("HANDFUSION_RUN_LONG") == "1"


@pytest.fixture
def report(capsys):
    def emit(n: int, title: str, checks: dict[str, bool], detail: str = ""):
        ok = all(checks.values())
        failed = [k for k, v in checks.items() if not v]
        with capsys.disabled():
            print(f"\ncriterion {n} {title}: {'PASS' if ok else 'FAIL'}"
                  + (f" ({detail})" if detail else "") + (f" failed: {failed}" if failed else ""))
        assert ok, failed
    return emit


def test_criterion_1_gradient_suite(report):
    t0 = time.perf_counter()
    reports = run_suite(seeds=20, eps=1e-6)
    seconds = time.perf_counter() - t0
    worst = max(reports, key=lambda r: r.max_error)
    report(1, "finite-difference suite", {
        "all ops < 1e-4": all(r.passed for r in reports),
        ">= 20 seeds": all(r.seeds >= 20 for r in reports),
        "runtime < 5 min": seconds < 300,
    }, f"{len(reports)} cases, worst {worst.name} {worst.max_error:.2e}, {seconds:.0f} s")


def test_criterion_2_oracle_equivalence(report):
    rng = np.random.default_rng(2024)
    ball = True
    for _ in range(100):
        pts = rng.uniform(-1, 1, size=(200, 3))
        centers = pts[rng.choice(200, 16, replace=False)]
        r, k = rng.uniform(0.2, 0.6), int(rng.integers(4, 33))
        ball &= np.array_equal(ball_query(centers, pts, r, k), ball_query_oracle(centers, pts, r, k))
    fps = True
    for _ in range(10):
        pts = rng.normal(size=(64, 3))
        start = int(np.argmax(pts[:, 2]))
        fps &= farthest_point_sample(pts, 24).tolist() == greedy_fps_oracle(pts, 24, start)
    cheb_err = 0.0
    with default_dtype(np.float64):
        for _ in range(50):
            n = int(rng.integers(2, 13))
            lap = scaled_laplacian(random_connected_graph(rng, n, int(rng.integers(0, n))))
            K = int(rng.integers(1, 6))
            x, w = rng.normal(size=(2, n, 3)), rng.normal(size=(K, 3, 4))
            got = cheb_conv(Tensor(x), lap, Tensor(w)).data
            cheb_err = max(cheb_err, max(np.abs(got[i] - dense_cheb_oracle(x[i], lap, w)).max() for i in range(2)))
        conv_err = 0.0
        for stride, pad, k in [(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2)]:
            x, w, b = rng.normal(size=(2, 3, 8, 8)), rng.normal(size=(4, 3, k, k)), rng.normal(size=4)
            got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
            conv_err = max(conv_err, np.abs(got - naive_conv2d(x, w, b, stride, pad)).max())
    report(2, "oracle equivalence", {
        "ball_query == brute force (100 clouds, N=200)": bool(ball),
        "fps == greedy oracle (N=64)": bool(fps),
        "cheb_conv == dense polynomial < 1e-10": cheb_err < 1e-10,
        "conv2d == naive loops < 1e-10": conv_err < 1e-10,
    }, f"cheb {cheb_err:.1e}, conv {conv_err:.1e}")


def test_criterion_3_structural_identities(report, samples):
    rng = np.random.default_rng(3)
    # zero-initialized FTN against the point-only pipeline, full model sizes
    enc = ImageEncoder(rng)
    pyr = enc(Tensor(normalize_image(rng.integers(0, 255, size=(1, 3, 64, 64))).astype(np.float32)))
    xyz = rng.normal(size=(2, 1024, 3)) * 0.03
    pix = rng.integers(0, 64, size=(2, 1024, 2))
    clouds = build_clouds(xyz, pix, [0, 0])
    full = PDFNet(np.random.default_rng(5), "pdfnet", center_feature=False).point_global(pyr, clouds).data
    point_only = PDFNet(np.random.default_rng(5), "depth_only", center_feature=False).point_global(None, clouds).data
    # K = 1 Chebyshev convolution against a linear layer
    with default_dtype(np.float64):
        conv = ChebConv(5, 3, rng, K=1)
        lin = Linear(5, 3, rng)
        lin.weight.data[...], lin.bias.data[...] = conv.weight.data[0], conv.bias.data
        x = Tensor(rng.normal(size=(2, 7, 5)))
        lap = scaled_laplacian(random_connected_graph(rng, 7, 3))
        k1 = np.array_equal(conv(x, lap).data, lin(x).data)
    # flip involution
    flip_err = 0.0
    for s in samples:
        back = flip_sample(flip_sample(s))
        flip_err = max(flip_err, np.abs(back.depth - s.depth).max(), np.abs(back.rgb.astype(float) - s.rgb).max(),
                       *(np.abs(back.hands[h].vertices - s.hands[h].vertices).max() for h in s.hands))
    # back-project / project round trip
    rt = 0.0
    for _ in range(20):
        depth = np.zeros((48, 64))
        u, v = rng.integers(0, 64, 50), rng.integers(0, 48, 50)
        depth[v, u] = rng.uniform(0.2, 2.0, 50)
        intr = CameraIntrinsics(*rng.uniform(40, 200, 2), *rng.uniform(20, 40, 2))
        pc = back_project(depth, depth > 0, intr)
        rt = max(rt, np.abs(project(pc.points, intr) - pc.pixel_index).max())
    # every loss at prediction == GT
    mini = miniature_topology()
    mesh = mini.template_full[None] * rng.uniform(0.9, 1.1, size=(3, 1, 1)) + np.array([0, 0, 0.5])
    joints = np.einsum("jv,nvc->njc", mini.regressor, mesh)
    heat = np.zeros((2, 2, 8, 8))
    heat[0, 0, 1, 2] = heat[0, 1, 5, 5] = heat[1, 0, 7, 0] = heat[1, 1, 3, 4] = 1.0
    masks = (rng.uniform(size=(2, 2, 8, 8)) > 0.5).astype(float)
    w = np.array([1.0, 0.0, 1.0])
    T = Tensor
    with default_dtype(np.float64):
        vals = {
            "center": L.center_loss(T(heat), heat).item(),
            "mask": L.mask_loss(T(masks), masks).item(),
            "root": L.root_loss(T(joints[:, 9]), joints[:, 9], w, 2).item(),
            "mesh": L.mesh_loss(T(mesh[:, mini.select[2]]), T(mesh), mesh, mini.select[2], w, 2).item(),
            "joint": L.joint_loss(T(joints), joints, w, 2).item(),
            "reproj": L.reprojection_loss(T(mesh), mesh, T(joints), joints, np.tile([150.0, 150, 48, 48], (3, 1)),
                                          w, 2).item(),
            "smooth": L.smooth_loss(T(mesh), mesh, mini.faces, w, 2).item(),
        }
    report(3, "structural identities", {
        "zero-init FTN bit-identical to point-only": np.array_equal(full, point_only),
        "K=1 cheb_conv == linear": bool(k1),
        "flip involution < 1e-6": flip_err < 1e-6,
        "round trip within 0.5 px": rt <= 0.5,
        "focal < 1e-4 at GT": vals["center"] < 1e-4,
        "other losses 0 at GT": all(v == 0.0 for k, v in vals.items() if k not in ("center", "smooth"))
        and vals["smooth"] < 1e-12,
    }, f"flip {flip_err:.1e}, round trip {rt:.1e} px, focal {vals['center']:.1e}")


def _rerun(script: str) -> None:
    subprocess.run([sys.executable, str(ROOT / "scripts" / script)], check=True)


def test_criterion_4_overfit(report):
    if RUN_LONG:
        _rerun("run_overfit.py")
    path = RESULTS / "overfit.json"
    if not path.exists():
        report(4, "overfit surrogate", {"results/overfit.json exists": False})
    body = json.loads(path.read_text())
    hands = body["modes"]["pred mask"]["per_hand"]
    iou = body["modes"]["pred mask"]["mask_iou"]
    checks = {"steps <= 2000": body["steps"] <= 2000, "runtime < 60 min": body["seconds"] < 3600}
    for hand, m in hands.items():
        checks[f"{hand} AL-MPJPE < 5 mm"] = m["AL-MPJPE"] < 5.0
        checks[f"{hand} MPJPE < 10 mm"] = m["MPJPE"] < 10.0
    detail = ", ".join(f"{h} {m['MPJPE']:.2f}/{m['AL-MPJPE']:.2f} mm" for h, m in hands.items())
    detail += f", IoU {iou['left']:.2f}/{iou['right']:.2f}, {body['steps']} steps in {body['seconds'] / 60:.1f} min"
    report(4, "overfit surrogate (predicted centers and masks)", checks, detail)


def test_criterion_5_ablation_trend(report):
    if RUN_LONG:
        _rerun("run_ablation.py")
    path = RESULTS / "ablation.json"
    if not path.exists():
        report(5, "ablation trend", {"results/ablation.json exists": False})
    body = json.loads(path.read_text())
    seeds = body["seeds"]
    # depth is segmented with GT masks, as in the reference ablation rows; centers are predicted
    wins = sum(e["GT mask"]["pdfnet_beats_rgb_only"] and e["GT mask"]["pdfnet_beats_concat"]
               for e in seeds.values())
    detail = "; ".join(
        f"seed {s}: " + " ".join(f"{m} {v:.1f}" for m, v in e["GT mask"]["MPJPE"].items()) for s, e in seeds.items())
    report(5, "ablation trend (test MPJPE mm, GT masks)", {
        "3 seeds": len(seeds) >= 3,
        "pdfnet < rgb_only and < concat on >= 2 seeds": wins >= 2,
    }, detail)


def test_criterion_6_metrics(report):
    gt, pred = crafted()
    rows = [hand_metrics(p, np.zeros((5, 3)), g, np.zeros((5, 3))) for p, g in zip(pred, gt)]
    mean = average(rows)
    expect = [(rows[0]["MPJPE"], 113 / 21), (rows[0]["AL-MPJPE"], 12 / 21), (rows[1]["MPJPE"], 60 / 21),
              (rows[1]["AL-MPJPE"], 60 / 21), (mean["MPJPE"], 173 / 42), (mean["AL-MPJPE"], 72 / 42)]
    rng = np.random.default_rng(6)
    gj, gv = rng.normal(scale=0.05, size=(21, 3)) + [0, 0, 0.6], rng.normal(scale=0.05, size=(778, 3)) + [0, 0, 0.6]
    shift = np.array([0.0, 0.006, -0.008])
    m = hand_metrics(gj + shift, gv + shift, gj, gv)
    report(6, "metric correctness", {
        "crafted case to 1e-9": all(abs(a - b) < 1e-9 for a, b in expect),
        "10 mm shift: MPJPE == 10.0": m["MPJPE"] == 10.0,
        "10 mm shift: AL-MPJPE == 0.0": m["AL-MPJPE"] == 0.0,
    })


def test_criterion_7_laplacian_spectrum(report, topo):
    lo, hi = np.inf, -np.inf
    for lap in topo.laplacians:
        lam = np.linalg.eigvalsh(lap)
        lo, hi = min(lo, lam[0]), max(hi, lam[-1])
    shipped = (lo, hi)
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 60))
        lam = np.linalg.eigvalsh(scaled_laplacian(random_connected_graph(rng, n, int(rng.integers(0, 2 * n)))))
        lo, hi = min(lo, lam[0]), max(hi, lam[-1])
    report(7, "scaled-Laplacian spectrum", {
        "shipped topology within [-1-1e-6, 1+1e-6]": shipped[0] >= -1 - 1e-6 and shipped[1] <= 1 + 1e-6,
        "50 random graphs within [-1-1e-6, 1+1e-6]": lo >= -1 - 1e-6 and hi <= 1 + 1e-6,
    }, f"shipped [{shipped[0]:.6f}, {shipped[1]:.6f}], all [{lo:.6f}, {hi:.6f}]")
