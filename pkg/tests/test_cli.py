import json
from pathlib import Path

import numpy as np
import pytest

from hgtraj.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main
from hgtraj.heterograph import build_scene_graph, graph_stats
from hgtraj.lanegraph import load_lane_graph, save_lane_graph
from hgtraj.scene import load_scene
from hgtraj.templates import build_template

FIXTURES = Path(__file__).parent / "fixtures"
SMALL = ["--set", "model.hidden_dim=16", "--set", "model.num_heads=2", "--set", "model.num_modes=3",
         "--set", "graph.num_anchors=3", "--set", "model.latent_dim=8", "--set", "model.edge_hidden=8",
         "--set", "model.decoder_hidden=16"]


@pytest.fixture
def fork_files(tmp_path):
    save_lane_graph(build_template("y_fork"), tmp_path / "y_fork.json")
    return FIXTURES / "fork_scene.json", tmp_path / "y_fork.json"


@pytest.fixture(scope="module")
def scenes_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("scenes")
    assert main(["gen-scenes", "--out", str(out), "--set", 'generator.template="y_fork"',
                 "--set", "generator.n_scenes=3"]) == EXIT_OK
    return out


def test_gen_scenes_files_parse_back(scenes_dir):
    files = sorted(scenes_dir.glob("*.json"))
    assert len(files) == 3
    g = load_lane_graph(scenes_dir / "maps" / "y_fork.json")
    for f in files:
        assert load_scene(f).lane_graph_ref == g.graph_id


def test_gen_scenes_is_byte_identical_per_seed(tmp_path):
    for d in ("a", "b"):
        assert main(["gen-scenes", "--out", str(tmp_path / d), "--set", "generator.n_scenes=4"]) == EXIT_OK
    for f in sorted((tmp_path / "a").rglob("*.json")):
        assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_gen_scenes_count(tmp_path):
    assert main(["gen-scenes", "--out", str(tmp_path), "--set", "generator.n_scenes=100"]) == EXIT_OK
    assert len(list(tmp_path.glob("*.json"))) == 100


def test_build_graph_stats_and_dumps(fork_files, tmp_path, capsys):
    scene, g = fork_files
    for d in ("a", "b"):
        assert main(["build-graph", "--scene", str(scene), "--map", str(g), "--out", str(tmp_path / d)]) == 0
    stats = json.loads((tmp_path / "a" / "stats.json").read_text())
    assert stats == graph_stats(build_scene_graph(load_scene(scene), build_template("y_fork")))
    for name in ("stats.json", "edges.txt", "anchors.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads(capsys.readouterr().out.split("\n}\n")[0] + "}") == stats


def test_build_graph_empty_scene_is_an_error(fork_files, tmp_path, capsys):
    scene, g = fork_files
    d = json.loads(scene.read_text())
    d["tracks"] = []
    d.pop("origin", None)
    (tmp_path / "empty.json").write_text(json.dumps(d))
    assert main(["build-graph", "--scene", str(tmp_path / "empty.json"), "--map", str(g)]) == EXIT_INVALID
    assert "no agents" in capsys.readouterr().err


def test_ssg_reports_reduction_ratio(fork_files, capsys):
    scene, g = fork_files
    assert main(["ssg", "--scene", str(scene), "--map", str(g)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "reduction ratio vs fully connected:" in out


def test_anchors_for_trunk_car(fork_files, capsys):
    scene, g = fork_files
    assert main(["anchors", "--scene", str(scene), "--map", str(g), "--agent", "car_a"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert [a["lanes"] for a in out["car_a"]] == [["T", "BL"], ["T", "BR"]]
    assert main(["anchors", "--scene", str(scene), "--map", str(g), "--agent", "nobody"]) == EXIT_INVALID


def test_rasterize_writes_patch(fork_files, tmp_path):
    scene, g = fork_files
    assert main(["rasterize", "--map", str(g), "--scene", str(scene), "--agent", "car_a",
                 "--out", str(tmp_path)]) == EXIT_OK
    assert len(list(tmp_path.glob("patch*"))) > 0


def test_missing_file_and_bad_config(fork_files, tmp_path):
    scene, g = fork_files
    assert main(["ssg", "--scene", str(tmp_path / "nope.json"), "--map", str(g)]) == EXIT_INVALID
    assert main(["ssg", "--scene", str(scene), "--map", str(g), "--set", "graph.nope=1"]) == EXIT_INVALID
    assert main(["--threads", "0", "ssg", "--scene", str(scene), "--map", str(g)]) == EXIT_INVALID


def test_pretrain_train_predict_eval(scenes_dir, tmp_path, capsys):
    ae = ["--set", "pretrain.ae.channels=[10,4,4,8,8,8,8]", "--set", "pretrain.n_patches=4",
          "--set", "pretrain.n_heldout=2", "--set", "pretrain.ae.epochs=2", "--set", "pretrain.ae.batch_size=2"]
    assert main(["pretrain-autoencoder", "--out", str(tmp_path / "ae")] + ae) == EXIT_OK
    curve = (tmp_path / "ae" / "autoencoder_curve.csv").read_text().splitlines()
    assert curve[0] == "epoch,mse" and len(curve) == 3
    assert "held-out mse" in capsys.readouterr().out

    common = ["--scenes", str(scenes_dir), "--autoencoder", str(tmp_path / "ae" / "autoencoder.ckpt")] + SMALL
    for d in ("r1", "r2"):
        assert main(["train", "--out", str(tmp_path / d), "--set", "train.epochs=2"] + common) == EXIT_OK
    log1 = (tmp_path / "r1" / "train_log.csv").read_text().splitlines()
    log2 = (tmp_path / "r2" / "train_log.csv").read_text().splitlines()
    assert len(log1) == 3
    assert [r.rsplit(",", 1)[0] for r in log1] == [r.rsplit(",", 1)[0] for r in log2]  # minus timing

    pred = tmp_path / "pred.json"
    assert main(["predict", "--model", str(tmp_path / "r1" / "model.ckpt"), "--out", str(pred)] + common) == 0
    entries = json.loads(pred.read_text())
    assert entries and all(len(e["modes"]) == 3 for e in entries)

    assert main(["eval", "--predictions", str(pred), "--scenes", str(scenes_dir), "--k", "1", "3",
                 "--out", str(tmp_path / "ev")]) == EXIT_OK
    assert "ORR" in (tmp_path / "ev" / "metrics.csv").read_text()
    assert main(["eval", "--predictions", str(pred), "--k", "5"]) == EXIT_INVALID


def test_encoder_latent_mismatch_is_invalid(scenes_dir, tmp_path):
    ae = ["--set", "pretrain.ae.channels=[10,4,4,8,8,8,8]", "--set", "pretrain.n_patches=2",
          "--set", "pretrain.n_heldout=0", "--set", "pretrain.ae.epochs=1", "--set", "pretrain.ae.batch_size=2"]
    assert main(["pretrain-autoencoder", "--out", str(tmp_path)] + ae) == EXIT_OK
    assert main(["train", "--scenes", str(scenes_dir), "--out", str(tmp_path / "r"), "--autoencoder",
                 str(tmp_path / "autoencoder.ckpt")] + SMALL + ["--set", "model.latent_dim=16"]) == EXIT_INVALID


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverging_training_exits_numeric(scenes_dir, tmp_path, capsys):
    code = main(["train", "--scenes", str(scenes_dir), "--out", str(tmp_path), "--set", "train.lr=1e300",
                 "--set", "train.epochs=3", "--set", "train.scenes_per_pass=1", "--set", "train.batch_agents=1"]
                + SMALL)
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    assert "27/27 checks passed" in capsys.readouterr().out


def test_prediction_anchor_ids_follow_slots(scenes_dir, tmp_path):
    assert main(["train", "--scenes", str(scenes_dir), "--out", str(tmp_path), "--set", "train.epochs=1"]
                + SMALL) == EXIT_OK
    assert main(["predict", "--scenes", str(scenes_dir), "--model", str(tmp_path / "model.ckpt"),
                 "--out", str(tmp_path / "p.json")] + SMALL) == EXIT_OK
    for e in json.loads((tmp_path / "p.json").read_text()):
        ids = [m.get("anchor_id") for m in e["modes"]]
        if e["agent_type"] == "rb" and ids[0] is not None:
            n = len(set(ids))
            assert ids == [i % n for i in range(len(ids))]   # cyclic padding
        assert np.isfinite(np.array([m["points"] for m in e["modes"]])).all()
