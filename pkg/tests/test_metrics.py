import numpy as np
import pytest
from hypothesis import given, strategies as st

from handfusion.metrics import average, hand_metrics, metrics


def crafted():
    """Two samples whose errors are easy to work out by hand (all in mm)."""
    rng = np.random.default_rng(0)
    gt = [rng.normal(scale=0.05, size=(21, 3)) + [0, 0, 0.5] for _ in range(2)]
    d0 = np.tile([3.0, 4.0, 0.0], (21, 1))
    d0[0] += [0.0, 0.0, 12.0]  # joint 0 lands at (3, 4, 12): 13 mm away
    d1 = np.tile([1.0, 2.0, 2.0], (21, 1)) * np.where(np.arange(21) % 2, 1, -1)[:, None]
    d1[9] = 0.0  # root exact, others 3 mm
    return gt, [gt[0] + d0 / 1000, gt[1] + d1 / 1000]


def test_crafted_two_sample_case():
    gt, pred = crafted()
    rows = [hand_metrics(p, np.zeros((5, 3)), g, np.zeros((5, 3))) for p, g in zip(pred, gt)]
    assert abs(rows[0]["MPJPE"] - 113 / 21) < 1e-9
    assert abs(rows[0]["AL-MPJPE"] - 12 / 21) < 1e-9
    assert abs(rows[1]["MPJPE"] - 60 / 21) < 1e-9
    assert abs(rows[1]["AL-MPJPE"] - 60 / 21) < 1e-9
    mean = average(rows)
    assert abs(mean["MPJPE"] - 173 / 42) < 1e-9
    assert abs(mean["AL-MPJPE"] - 72 / 42) < 1e-9


def test_global_shift_is_exact():
    rng = np.random.default_rng(1)
    gj, gv = rng.normal(scale=0.05, size=(21, 3)) + [0, 0, 0.6], rng.normal(scale=0.05, size=(778, 3)) + [0, 0, 0.6]
    shift = np.array([0.006, 0.0, 0.008])  # 10 mm
    m = hand_metrics(gj + shift, gv + shift, gj, gv)
    assert m["MPJPE"] == 10.0 and m["MPVPE"] == 10.0
    assert m["AL-MPJPE"] == 0.0 and m["AL-MPVPE"] == 0.0


@given(st.integers(0, 10_000), st.lists(st.floats(-1, 1), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3))
def test_shift_property(seed, direction):
    rng = np.random.default_rng(seed)
    gj = rng.normal(scale=0.1, size=(21, 3)) + [0, 0, 0.6]
    gv = rng.normal(scale=0.1, size=(778, 3)) + [0, 0, 0.6]
    shift = 0.01 * np.asarray(direction) / np.linalg.norm(direction)
    m = hand_metrics(gj + shift, gv + shift, gj, gv)
    assert m["MPJPE"] == 10.0 and m["AL-MPJPE"] == 0.0


def test_metrics_per_hand_and_aligned_le_raw_for_pure_root_error():
    rng = np.random.default_rng(2)
    g = {"left": {"joints": rng.normal(size=(21, 3)), "vertices": rng.normal(size=(778, 3))}}
    p = {"left": {"joints": g["left"]["joints"] + 0.001, "vertices": g["left"]["vertices"] + 0.001}}
    out = metrics(p, g)
    assert set(out) == {"left"}
    assert out["left"]["AL-MPJPE"] == 0.0 and out["left"]["MPJPE"] == pytest.approx(np.sqrt(3), rel=1e-9)


def test_zero_error():
    j, v = np.ones((21, 3)), np.ones((778, 3))
    assert set(hand_metrics(j, v, j, v).values()) == {0.0}
