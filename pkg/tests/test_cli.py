import json

import numpy as np
import pytest

from handfusion.checkpoints import load_run
from handfusion.cli import main
from handfusion.data.io import load_sample
from handfusion.infer import export, predict, read_depth, read_intrinsics, read_obj, read_rgb, write_obj
from handfusion.topology import load_topology, sphere_mesh


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--count", "8", "--resolution", "96", "--seed", "2"]) == 0
    cfg = {"model": {"resolution": 96}, "train": {"epochs": 1, "batch_size": 4, "augment": False},
           "paths": {"train_data": str(root / "data")}}
    (root / "cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "--config", str(root / "cfg.json"), "--out", str(root / "run")]) == 0
    return root


def test_train_writes_checkpoint_and_csv(run):
    assert (run / "run" / "last.ckpt").exists()
    rows = (run / "run" / "train_log.csv").read_text().splitlines()
    assert len(rows) == 1 + 2


def test_eval_reports_both_mask_modes(run, capsys):
    out = run / "metrics.json"
    assert main(["eval", "--checkpoint", str(run / "run" / "last.ckpt"), "--label", "smoke",
                 "--data", str(run / "data"), "--out", str(out)]) == 0
    body = json.loads(out.read_text())
    assert set(body) == {"smoke [GT mask]", "smoke [pred mask]"}
    for entry in body.values():
        assert set(entry["per_hand"]["left"]) == {"MPJPE", "MPVPE", "AL-MPJPE", "AL-MPVPE"}
    assert "smoke [pred mask]" in capsys.readouterr().out


def test_eval_is_deterministic(run, tmp_path):
    for name in ("a", "b"):
        main(["eval", "--checkpoint", str(run / "run" / "last.ckpt"), "--data", str(run / "data"),
              "--mask", "pred", "--out", str(tmp_path / f"{name}.json")])
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_infer_writes_obj_and_json(run, tmp_path):
    sample = run / "data" / "000000"
    code = main(["infer", "--checkpoint", str(run / "run" / "last.ckpt"), "--rgb", str(sample / "rgb.png"),
                 "--depth", str(sample / "depth.png"), "--intrinsics", str(sample / "anno.json"),
                 "--out", str(tmp_path)])
    assert code == 0
    body = json.loads((tmp_path / "prediction.json").read_text())
    assert set(body) == {"left", "right"}
    for entry in body.values():
        assert ("obj" in entry) == entry["detected"]


def test_detection_threshold_and_obj_export(run, tmp_path):
    net, _, _ = load_run(run / "run" / "last.ckpt")
    sample = run / "data" / "000000"
    args = read_rgb(sample / "rgb.png"), read_depth(sample / "depth.png"), read_intrinsics(str(sample / "anno.json"))
    net.cfg.model.detect_threshold = 0.0
    body = export(predict(net, *args), net, tmp_path / "yes")
    verts, faces = read_obj(tmp_path / "yes" / body["right"]["obj"])
    assert verts.shape == (778, 3) and faces.max() == 777
    np.testing.assert_array_equal(faces, net.topo.hand_faces("right"))
    net.cfg.model.detect_threshold = 1.01
    body = export(predict(net, *args), net, tmp_path / "no")
    assert not body["left"]["detected"] and "confidence" in body["left"]["error"]
    assert not (tmp_path / "no" / "left.obj").exists()


def test_infer_without_depth_is_an_input_error(run, tmp_path, capsys):
    sample = run / "data" / "000000"
    code = main(["infer", "--checkpoint", str(run / "run" / "last.ckpt"), "--rgb", str(sample / "rgb.png"),
                 "--intrinsics", "100,100,48,48", "--out", str(tmp_path)])
    assert code == 1
    assert "depth" in capsys.readouterr().err


def test_depth_png_is_read_in_meters(run):
    sample = load_sample(run / "data" / "000000")
    depth = read_depth(run / "data" / "000000" / "depth.png")
    np.testing.assert_allclose(depth, sample.depth, atol=5e-4)


def test_config_errors_exit_with_one(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"nope": 1}}))
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 1
    assert main(["eval"]) == 1
    assert main(["infer", "--checkpoint", str(tmp_path / "missing.ckpt"), "--rgb", "x.png",
                 "--intrinsics", "1,1,0,0", "--out", str(tmp_path)]) == 1


def test_check_grad_exit_codes(capsys):
    assert main(["check-grad", "--seeds", "2", "--only", "decode_mask"]) == 0
    assert "decode_mask" in capsys.readouterr().out
    assert main(["check-grad", "--seeds", "2", "--only", "decode_mask", "--inject-fault", "conv_transpose2d"]) == 3
    assert main(["check-grad", "--seeds", "1", "--inject-fault", "no_such_op"]) == 1


def test_make_topology_default_and_custom(tmp_path, topo):
    assert main(["make-topology", "--out", str(tmp_path / "hand.pdft")]) == 0
    assert load_topology(tmp_path / "hand.pdft").digest == topo.digest
    verts, faces = sphere_mesh(48, 0)
    write_obj(tmp_path / "m.obj", verts, faces)
    reg = np.zeros((21, 48))
    reg[np.arange(21), np.arange(21)] = 1.0
    (tmp_path / "dense.json").write_text(json.dumps({"regressor": reg.tolist()}))
    sparse = {"joints": [[[j, 1.0]] for j in range(21)], "root_joint": 4}
    (tmp_path / "sparse.json").write_text(json.dumps(sparse))
    for name in ("dense", "sparse"):
        assert main(["make-topology", "--mesh", str(tmp_path / "m.obj"), "--joints", str(tmp_path / f"{name}.json"),
                     "--sizes", "8", "16", "32", "--out", str(tmp_path / f"{name}.pdft")]) == 0
    a, b = load_topology(tmp_path / "dense.pdft"), load_topology(tmp_path / "sparse.pdft")
    assert a.level_sizes == (8, 16, 32)
    np.testing.assert_array_equal(a.regressor, b.regressor)
    assert b.root_joint == 4
    assert main(["make-topology", "--mesh", str(tmp_path / "m.obj"), "--out", str(tmp_path / "x.pdft")]) == 1


def test_make_topology_rejects_disconnected_mesh(tmp_path, topo):
    # the built-in hand needs its stitching edges; the bare faces leave islands
    write_obj(tmp_path / "m.obj", topo.template(0, "right"), topo.faces)
    (tmp_path / "j.json").write_text(json.dumps({"regressor": topo.regressor.tolist()}))
    assert main(["make-topology", "--mesh", str(tmp_path / "m.obj"), "--joints", str(tmp_path / "j.json"),
                 "--out", str(tmp_path / "x.pdft")]) == 1
